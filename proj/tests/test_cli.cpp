#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "opnet/errors.hpp"
#include "opnet/harness.hpp"
#include "opnet/tensor_io.hpp"

using namespace opnet;
namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("opnet_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    int run(std::vector<std::string> args) {
        args.insert(args.begin(), "opnet");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        out_.str("");
        err_.str("");
        return run_cli(static_cast<int>(argv.size()), argv.data(), out_, err_);
    }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    static std::string slurp(const fs::path& p) {
        std::ifstream is(p, std::ios::binary);
        return {std::istreambuf_iterator<char>(is), {}};
    }

    fs::path dir_;
    std::ostringstream out_, err_;
};

}  // namespace

TEST_F(Cli, GenForwardLogsIntermediateShape) {
    ASSERT_EQ(run({"gen", "--channels", "4", "--s2", "64", "--out", path("in")}), 0) << err_.str();
    ASSERT_EQ(run({"forward", "--in", path("in"), "--out", path("out"), "--heads", "2"}), 0)
        << err_.str();
    EXPECT_NE(out_.str().find("(1,5,64,64)"), std::string::npos) << out_.str();
    FeaturePyramid in = read_pyramid_dir(path("in"));
    FeaturePyramid out = read_pyramid_dir(path("out"));
    EXPECT_EQ(in.shapes(), out.shapes());
    auto shapes = nlohmann::json::parse(slurp(dir_ / "out" / "shapes.json"));
    EXPECT_EQ(shapes["mp_op_intermediate"], nlohmann::json({1, 5, 64, 64}));
}

TEST_F(Cli, IdentityParamsRoundTripBitwise) {
    ASSERT_EQ(run({"gen", "--channels", "4", "--s2", "16", "--out", path("in")}), 0);
    std::ofstream(path("params.json")) << R"({"init": "identity"})";
    ASSERT_EQ(run({"forward", "--in", path("in"), "--out", path("a"), "--params", path("params.json")}), 0)
        << err_.str();
    ASSERT_EQ(run({"forward", "--in", path("a"), "--out", path("b"), "--params", path("params.json")}), 0);
    EXPECT_TRUE(identical(read_pyramid_dir(path("in")), read_pyramid_dir(path("a"))));
    EXPECT_TRUE(identical(read_pyramid_dir(path("a")), read_pyramid_dir(path("b"))));
}

TEST_F(Cli, DeterministicOutputs) {
    ASSERT_EQ(run({"gen", "--channels", "4", "--s2", "8", "--seed", "3", "--out", path("in")}), 0);
    ASSERT_EQ(run({"forward", "--in", path("in"), "--out", path("a")}), 0);
    ASSERT_EQ(run({"forward", "--in", path("in"), "--out", path("b")}), 0);
    for (const char* f : {"S2.opt1", "S6.opt1", "shapes.json", "meta.json"}) {
        EXPECT_EQ(slurp(dir_ / "a" / f), slurp(dir_ / "b" / f)) << f;
    }
}

TEST_F(Cli, MismatchedLevelExitsContractNamingLevel) {
    ASSERT_EQ(run({"gen", "--channels", "2", "--s2", "8", "--out", path("in")}), 0);
    write_opt1(dir_ / "in" / "S3.opt1", Tensor({1, 2, 3, 4}));
    EXPECT_EQ(run({"forward", "--in", path("in"), "--out", path("out"), "--heads", "1"}), 3);
    EXPECT_NE(err_.str().find("S3"), std::string::npos) << err_.str();
}

TEST_F(Cli, MissingAndCorruptFilesExitIo) {
    EXPECT_EQ(run({"forward", "--in", path("nowhere"), "--out", path("out")}), 2);
    ASSERT_EQ(run({"gen", "--channels", "2", "--s2", "8", "--out", path("in")}), 0);
    std::ofstream(dir_ / "in" / "S4.opt1", std::ios::binary) << "OPT2garbage";
    EXPECT_EQ(run({"forward", "--in", path("in"), "--out", path("out"), "--heads", "1"}), 2);
    EXPECT_NE(err_.str().find("S4.opt1"), std::string::npos) << err_.str();
}

TEST_F(Cli, UsageAndConfigErrorsExitOne) {
    EXPECT_EQ(run({}), 1);
    EXPECT_EQ(run({"bogus"}), 1);
    EXPECT_EQ(run({"gradcheck", "--scope", "nonsense", "--out", path("g")}), 1);
    EXPECT_EQ(run({"count", "--channels", "6", "--heads", "4", "--out", path("c")}), 1);
    std::ofstream(path("bad.json")) << R"({"chanels": 3})";
    EXPECT_EQ(run({"count", "--config", path("bad.json"), "--out", path("c")}), 1);
}

TEST_F(Cli, GradcheckPassAndImpossibleThreshold) {
    EXPECT_EQ(run({"gradcheck", "--scope", "primitive", "--out", path("g")}), 0) << out_.str();
    EXPECT_EQ(slurp(dir_ / "g" / "gradcheck.csv").rfind("name,count,max_rel_error,pass\n", 0), 0u);
    EXPECT_EQ(run({"gradcheck", "--scope", "primitive", "--threshold", "0", "--out", path("g0")}), 4);
}

TEST_F(Cli, CountHandConfigAndSweep) {
    std::ofstream(path("cfg.json")) << R"({"channels": 2, "heads": 1, "s2_height": 1, "s2_width": 1})";
    ASSERT_EQ(run({"count", "--config", path("cfg.json"), "--out", path("c")}), 0) << err_.str();
    auto doc = nlohmann::json::parse(slurp(dir_ / "c" / "accounting.json"));
    // Every level of a 1x1 S2 pyramid is 1x1: five copies of the hand-counted block.
    EXPECT_EQ(doc["entries"][0]["stage"], "base_op");
    EXPECT_EQ(doc["entries"][0]["macs"], 5 * 20);
    EXPECT_EQ(doc["entries"][0]["params"], 5 * 12);
    EXPECT_TRUE(doc["sweep"]["rows"].empty());

    ASSERT_EQ(run({"count", "--channels", "8", "--s2", "4", "--sweep", "P=1,2,4 C=8", "--out", path("s")}), 0);
    auto sweep = nlohmann::json::parse(slurp(dir_ / "s" / "accounting.json"))["sweep"]["rows"];
    ASSERT_EQ(sweep.size(), 3u);
    EXPECT_EQ(sweep[0]["similarity_macs"].get<std::uint64_t>(),
              2 * sweep[1]["similarity_macs"].get<std::uint64_t>());
    EXPECT_EQ(sweep[1]["similarity_macs"].get<std::uint64_t>(),
              2 * sweep[2]["similarity_macs"].get<std::uint64_t>());
    EXPECT_TRUE(fs::exists(dir_ / "s" / "accounting.csv"));
    EXPECT_TRUE(fs::exists(dir_ / "s" / "complexity.csv"));
}

TEST_F(Cli, ExperimentMismatchExtremes) {
    ASSERT_EQ(run({"experiment", "--steps", "3", "--perturb", "0", "--out", path("e0")}), 0) << err_.str();
    EXPECT_EQ(slurp(dir_ / "e0" / "mismatch.csv"),
              "series,S2,S3,S4,S5,S6,overall\nsynthetic,0,0,0,0,0,0\n");
    ASSERT_EQ(run({"experiment", "--steps", "3", "--perturb", "1", "--out", path("e1")}), 0);
    EXPECT_EQ(slurp(dir_ / "e1" / "mismatch.csv"),
              "series,S2,S3,S4,S5,S6,overall\nsynthetic,1,1,1,1,1,1\n");
    EXPECT_EQ(slurp(dir_ / "e1" / "loss.csv").rfind("step,loss\n0,", 0), 0u);
}

TEST_F(Cli, ExperimentDivergenceExitsFour) {
    std::ofstream(path("cfg.json")) << R"({"sgd": {"learning_rate": 1e6}})";
    EXPECT_EQ(run({"experiment", "--config", path("cfg.json"), "--out", path("e")}), 4);
}

TEST(SyntheticPairs, LevelsInRangeAndPerturbation) {
    auto pairs = synthetic_level_pairs(42, 500, 0.3);
    std::size_t flipped = 0;
    for (auto [chosen, gt] : pairs) {
        EXPECT_GE(chosen, 2);
        EXPECT_LE(chosen, 6);
        EXPECT_LE(std::abs(chosen - gt), 1);
        flipped += chosen != gt;
    }
    EXPECT_GT(flipped, 100u);
    EXPECT_LT(flipped, 200u);
    EXPECT_EQ(pairs, synthetic_level_pairs(42, 500, 0.3));
}

TEST(SweepParsing, Forms) {
    EXPECT_TRUE(parse_sweep("").empty());
    EXPECT_EQ(parse_sweep("P=1,2 C=4").size(), 2u);
    EXPECT_THROW(parse_sweep("P=3 C=4"), ConfigError);
    EXPECT_THROW(parse_sweep("P=1"), ConfigError);
    EXPECT_THROW(parse_sweep("Q=1 C=4"), ConfigError);
}
