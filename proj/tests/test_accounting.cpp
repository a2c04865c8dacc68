#include <gtest/gtest.h>

#include <random>

#include "json.hpp"
#include "opnet/accounting.hpp"
#include "opnet/errors.hpp"
#include "opnet/instrument.hpp"
#include "opnet/training.hpp"

using namespace opnet;

TEST(CountConv, HandCounts) {
    ConvCount unit = count_conv({1, 1, 1, 1}, 1, 1, 1, false);
    EXPECT_EQ(unit.macs, 1u);
    EXPECT_EQ(unit.params, 1u);
    ConvCount c = count_conv({1, 4, 8, 8}, 4, 4, 3, true);
    EXPECT_EQ(c.macs, 9216u);
    EXPECT_EQ(c.params, 148u);
    ConvCount empty = count_conv({1, 0, 8, 8}, 0, 4, 3, true);
    EXPECT_EQ(empty.macs, 0u);
    EXPECT_EQ(empty.params, 0u);
}

TEST(CountStage, BaseOpHandCount) {
    AccountingConfig cfg;
    cfg.base_cfg = {1, 1.0};
    const std::vector<Shape> levels = {{1, 2, 1, 1}};
    StageEntry e = count_stage("base_op", cfg, levels);
    EXPECT_EQ(e.macs, 20u);
    EXPECT_EQ(e.params, 12u);
}

TEST(CountStage, EmptyLevelsAndUnknownName) {
    AccountingConfig cfg;
    for (const auto& name : stage_names()) {
        StageEntry e = count_stage(name, cfg, {});
        EXPECT_EQ(e.macs, 0u);
        EXPECT_EQ(e.params, 0u);
    }
    EXPECT_THROW(count_stage("bogus", cfg, {}), ConfigError);
}

TEST(CountStage, MatchesInstrumentedRunPerStage) {
    std::mt19937_64 rng(10);
    for (int t = 0; t < 4; ++t) {
        const std::size_t heads = 1 + rng() % 3;
        const std::size_t c = heads * (1 + rng() % 3);
        FeaturePyramid p = FeaturePyramid::randn(1 + rng() % 2, c, 3 + rng() % 9, 3 + rng() % 9, rng);
        OpNetParams params = OpNetParams::random(c, rng);
        AccountingConfig cfg;
        cfg.base_cfg = {heads, 1.0};
        MacCounter counter;
        {
            CountingScope scope(counter);
            opnet_feature_path(p, params, cfg.base_cfg);
        }
        const auto shapes = p.shapes();
        for (const auto& name : stage_names()) {
            EXPECT_EQ(counter.stage(name), count_stage(name, cfg, shapes).macs) << name;
        }
        EXPECT_EQ(counter.stage("unstaged"), 0u);
        EXPECT_EQ(count_pyramid_macs_params(cfg, shapes).totals().params, params.param_count());
    }
}

TEST(Report, CsvAndJsonLayout) {
    AccountingReport r;
    r.add({"a", 1500000000, 7});
    r.add({"b", 10, 3});
    EXPECT_EQ(r.to_csv(), "stage,macs,params\na,1500000000,7\nb,10,3\ntotal,1500000010,10\n");
    auto doc = nlohmann::json::parse(r.to_json());
    EXPECT_EQ(doc["entries"][0]["stage"], "a");
    EXPECT_EQ(doc["entries"][0]["macs"], 1500000000u);
    EXPECT_EQ(doc["totals"]["params"], 10u);
    EXPECT_EQ(AccountingReport::render_gmacs(1500000000), "1.50");
    EXPECT_EQ(AccountingReport::render_mparams(985600), "0.99");
}

TEST(Report, TotalsIndependentOfOrder) {
    AccountingReport a, b;
    a.add({"x", 5, 1});
    a.add({"y", 7, 2});
    b.add({"y", 7, 2});
    b.add({"x", 5, 1});
    EXPECT_EQ(a.totals(), b.totals());
}

TEST(Report, DefaultConfigStageOrder) {
    AccountingConfig cfg;
    const auto shapes = FeaturePyramid::shapes_for(1, 256, 64, 64);
    AccountingReport r = count_pyramid_macs_params(cfg, shapes);
    ASSERT_EQ(r.entries().size(), stage_names().size());
    for (std::size_t i = 0; i < stage_names().size(); ++i) {
        EXPECT_EQ(r.entries()[i].stage, stage_names()[i]);
    }
    // Three 256x256 transforms per level.
    EXPECT_EQ(r.entries()[0].params, 5u * 3 * 256 * 256);
}

TEST(ComplexityAudit, ExactFormulaAndScaling) {
    std::vector<std::pair<std::size_t, std::size_t>> sweep;
    for (std::size_t c : {8u, 16u})
        for (std::size_t p : {1u, 2u, 4u, 8u}) sweep.emplace_back(p, c);
    ComplexityAudit audit = complexity_audit(sweep, 1, 3, 5, 1);
    ASSERT_EQ(audit.rows.size(), sweep.size());
    for (const auto& row : audit.rows) {
        EXPECT_EQ(row.measured, 2u * row.channels * row.channels / row.heads * 15);
        EXPECT_EQ(row.measured, row.predicted);
        if (row.heads == row.channels) {
            EXPECT_EQ(row.measured, 2u * row.channels * 15);
        }
    }
    ASSERT_TRUE(audit.channel_exponent && audit.head_exponent);
    EXPECT_NEAR(*audit.channel_exponent, 2.0, 1e-12);
    EXPECT_NEAR(*audit.head_exponent, -1.0, 1e-12);
    EXPECT_FALSE(audit.note.empty());
}

TEST(ComplexityAudit, EmptySweep) {
    ComplexityAudit audit = complexity_audit({}, 1, 2, 2);
    EXPECT_TRUE(audit.rows.empty());
    EXPECT_EQ(audit.to_csv(), "heads,channels,similarity_macs,predicted_macs\n");
}
