#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "opnet/errors.hpp"
#include "opnet/pyramid.hpp"
#include "oracles.hpp"

using namespace opnet;

namespace {

FeaturePyramid random_pyramid(std::uint64_t seed, std::size_t c, std::size_t s2,
                              std::size_t batch = 1) {
    std::mt19937_64 rng(seed);
    return FeaturePyramid::randn(batch, c, s2, s2, rng);
}

}  // namespace

TEST(Pyramid, ShapesHalveRoundingUp) {
    auto shapes = FeaturePyramid::shapes_for(2, 3, 13, 8);
    ASSERT_EQ(shapes.size(), 5u);
    EXPECT_EQ(shapes[1], (Shape{2, 3, 7, 4}));
    EXPECT_EQ(shapes[4], (Shape{2, 3, 1, 1}));
    EXPECT_EQ(level_name(0), "S2");
    EXPECT_EQ(level_name(4), "S6");
}

TEST(Pyramid, ValidateNamesOffendingLevel) {
    FeaturePyramid p = random_pyramid(1, 2, 8);
    p.levels[1] = Tensor({1, 2, 5, 4});
    try {
        p.validate();
        FAIL();
    } catch (const ContractViolation& e) {
        EXPECT_NE(std::string(e.what()).find("S3"), std::string::npos) << e.what();
    }
}

TEST(IntpReduce, ConstantLevelsSurvive) {
    FeaturePyramid p;
    for (auto s : FeaturePyramid::shapes_for(2, 3, 8, 8)) {
        p.levels.emplace_back(s, 1.5 + static_cast<double>(p.levels.size()));
    }
    MpOpParams params = MpOpParams::residual_identity(3);
    Tensor out = intp_reduce(p, params).value;
    ASSERT_EQ(out.shape(), (Shape{2, 5, 8, 8}));
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t i = 0; i < 5; ++i)
            for (double v : out.plane(b, i)) EXPECT_NEAR(v, 1.5 + static_cast<double>(i), 1e-12);
}

TEST(IntpReduce, ShapeAt64) {
    FeaturePyramid p = random_pyramid(2, 2, 64, 2);
    std::mt19937_64 rng(2);
    EXPECT_EQ(intp_reduce(p, MpOpParams::random(2, rng)).value.shape(), (Shape{2, 5, 64, 64}));
}

TEST(IntpReduce, MatchesComposedOracle) {
    FeaturePyramid p = random_pyramid(29, 3, 8);
    std::mt19937_64 rng(29);
    MpOpParams params = MpOpParams::random(3, rng);
    for (auto& r : params.reduce) r = ConvParams::random(3, 1, 1, true, rng);
    EXPECT_LE(max_abs_diff(intp_reduce(p, params).value, oracle::intp(p, params)), 1e-10);
}

TEST(IntpReduce, InvalidPyramidRejected) {
    FeaturePyramid p = random_pyramid(3, 2, 8);
    p.levels.pop_back();
    std::mt19937_64 rng(3);
    EXPECT_THROW(intp_reduce(p, MpOpParams::random(2, rng)), ContractViolation);
}

TEST(MpOp, IdenticalReducedMapsGiveUniformCrossWeights) {
    FeaturePyramid p;
    for (auto s : FeaturePyramid::shapes_for(1, 2, 8, 8)) p.levels.emplace_back(s, 0.75);
    std::mt19937_64 rng(9);
    MpOpParams params = MpOpParams::random(2, rng);
    params.cross = AttentionParams::identity(5);
    MpOpTrace trace = mp_op_trace(p, params);
    for (double w : trace.cross_weights.data()) EXPECT_NEAR(w, 0.2, 1e-12);
    for (std::size_t i = 1; i < 5; ++i) {
        EXPECT_LE(max_abs_diff(slice_channels(trace.recombined, i, 1).value,
                               slice_channels(trace.recombined, 0, 1).value),
                  1e-12);
    }
}

TEST(MpOp, ResidualIdentityReproducesInput) {
    FeaturePyramid p = random_pyramid(4, 3, 8, 2);
    EXPECT_TRUE(identical(mp_op_forward(p, MpOpParams::residual_identity(3)).value, p));
}

TEST(MpOp, MatchesComposedOracle) {
    FeaturePyramid p = random_pyramid(31, 4, 8);
    std::mt19937_64 rng(31);
    MpOpParams params = MpOpParams::random(4, rng);
    for (auto& r : params.reduce) r = ConvParams::random(4, 1, 1, true, rng);
    EXPECT_LE(max_abs_diff(mp_op_forward(p, params).value, oracle::mp_op(p, params)), 1e-9);
}

TEST(MpOp, CrossWeightRowsSumToOne) {
    std::mt19937_64 rng(50);
    for (int t = 0; t < 10; ++t) {
        FeaturePyramid p = FeaturePyramid::randn(2, 3, 6, 5, rng);
        MpOpParams params = MpOpParams::random(3, rng);
        const Tensor& w = mp_op_trace(p, params).cross_weights;
        ASSERT_EQ(w.shape(), matrix_shape(2, 5, 5));
        for (std::size_t r = 0; r < 10; ++r) {
            double s = 0.0;
            for (std::size_t j = 0; j < 5; ++j) s += w.data()[5 * r + j];
            EXPECT_NEAR(s, 1.0, 1e-12);
        }
    }
}

TEST(FeaturePath, MatchesStageComposition) {
    FeaturePyramid p = random_pyramid(37, 4, 8);
    std::mt19937_64 rng(37);
    OpNetParams params = OpNetParams::random(4, rng);
    EXPECT_LE(max_abs_diff(opnet_feature_path(p, params, {2, 1.0}).value,
                           oracle::opnet_path(p, params, 2)),
              1e-9);
}

TEST(FeaturePath, PreservesShapes) {
    std::mt19937_64 rng(6);
    for (auto [b, c, h, w, heads] : {std::tuple{1, 4, 8, 8, 2}, {2, 6, 9, 5, 3}, {1, 2, 3, 17, 1}}) {
        FeaturePyramid p = FeaturePyramid::randn(b, c, h, w, rng);
        OpNetParams params = OpNetParams::random(c, rng);
        EXPECT_EQ(opnet_feature_path(p, params, {static_cast<std::size_t>(heads), 1.0}).value.shapes(),
                  p.shapes());
    }
}

TEST(FeaturePath, ResidualIdentityReproducesInput) {
    FeaturePyramid p = random_pyramid(7, 4, 8, 2);
    FeaturePyramid out = opnet_feature_path(p, OpNetParams::residual_identity(4), {2, 1.0}).value;
    EXPECT_LE(max_abs_diff(out, p), 1e-12);
}

TEST(FeaturePath, IndivisibleHeadsRejected) {
    FeaturePyramid p = random_pyramid(8, 6, 8);
    std::mt19937_64 rng(8);
    EXPECT_THROW(opnet_feature_path(p, OpNetParams::random(6, rng), {4, 1.0}), ConfigError);
}

TEST(NamedParameters, CoverEveryScalar) {
    std::mt19937_64 rng(2);
    OpNetParams params = OpNetParams::random(4, rng);
    std::size_t n = 0;
    auto named = named_parameters(params);
    for (const auto& np : named) n += np.values.size();
    EXPECT_EQ(n, params.param_count());
    EXPECT_EQ(named.front().name, "base.S2.attention.query.weight");
    EXPECT_TRUE(std::ranges::any_of(named, [](const NamedParam& np) { return np.name == "mp.restore.S6.bias"; }));
}

TEST(AssignLevel, Anchors) {
    EXPECT_EQ(assign_fpn_level({224, 224, {}}), 4);
    EXPECT_EQ(assign_fpn_level({1, 1, {}}), 2);
    EXPECT_EQ(assign_fpn_level({2000, 2000, {}}), 6);
    EXPECT_EQ(assign_fpn_level({448, 448, {}}), 5);
    EXPECT_EQ(assign_fpn_level({223, 223, {}}), 3);
    EXPECT_THROW(assign_fpn_level({0, 10, {}}), ContractViolation);
    EXPECT_THROW(assign_fpn_level({10, -1, {}}), ContractViolation);
}

TEST(Mismatch, AllMatching) {
    std::vector<std::pair<int, int>> pairs = {{2, 2}, {5, 5}, {6, 6}};
    EXPECT_EQ(mismatch_rate(pairs).overall, 0.0);
}

TEST(Mismatch, DirectCounting) {
    std::vector<std::pair<int, int>> pairs = {{2, 2}, {3, 4}, {4, 4}, {6, 5}};
    MismatchReport r = mismatch_rate(pairs);
    EXPECT_EQ(r.overall, 0.5);
    EXPECT_EQ(r.per_level[0], 0.0);
    EXPECT_FALSE(r.per_level[1].has_value());
    EXPECT_EQ(r.per_level[2], 0.5);
    EXPECT_EQ(r.per_level[3], 1.0);
    EXPECT_FALSE(r.per_level[4].has_value());
}

TEST(Mismatch, OutOfRangeRejected) {
    std::vector<std::pair<int, int>> pairs = {{1, 2}};
    EXPECT_THROW(mismatch_rate(pairs), ContractViolation);
    pairs = {{2, 7}};
    EXPECT_THROW(mismatch_rate(pairs), ContractViolation);
}

TEST(Mismatch, PermutationInvariantAndMonotone) {
    std::mt19937_64 rng(77);
    std::uniform_int_distribution<int> level(2, 6);
    for (int t = 0; t < 20; ++t) {
        std::vector<std::pair<int, int>> pairs(40);
        for (auto& pr : pairs) {
            pr.second = level(rng);
            pr.first = rng() % 2 ? pr.second : level(rng);
        }
        const MismatchReport base = mismatch_rate(pairs);
        auto shuffled = pairs;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        const MismatchReport perm = mismatch_rate(shuffled);
        EXPECT_EQ(perm.overall, base.overall);
        EXPECT_EQ(perm.per_level, base.per_level);

        auto it = std::ranges::find_if(pairs, [](auto& pr) { return pr.first == pr.second; });
        if (it == pairs.end()) continue;
        it->first = it->second == 6 ? 5 : it->second + 1;
        EXPECT_NEAR(mismatch_rate(pairs).overall - base.overall, 1.0 / 40.0, 1e-15);
    }
}

TEST(Mismatch, CsvHasOneColumnPerLevel) {
    std::vector<std::pair<int, int>> pairs = {{2, 2}, {3, 4}, {4, 4}, {6, 5}};
    const std::string csv = mismatch_csv(mismatch_rate(pairs), "demo");
    EXPECT_EQ(csv, "series,S2,S3,S4,S5,S6,overall\ndemo,0,,0.5,1,,0.5\n");
}
