#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "adaptix/harness.hpp"

using namespace adaptix;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("adaptix_test_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

RunConfig config(const std::string& text, const fs::path& out) {
    RunConfig c = parse_config(text);
    c.output_dir = out.string();
    return c;
}

std::string config_error(const std::string& text) {
    try {
        parse_config(text);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST(ParseConfig, MinimalDocumentGetsDefaults) {
    const RunConfig c = parse_config(R"({"problem": {"name": "linear"}, "sigmoid": {"family": "kesten"},
                                         "schedule": {"family": "reciprocal"}})");
    EXPECT_EQ(c.problem.name, "linear");
    EXPECT_EQ(c.problem.A, Matrix::Identity(1, 1));
    EXPECT_EQ(c.problem.root, Vector::Zero(1));
    EXPECT_EQ(c.problem.noise.cov, Matrix::Identity(1, 1));
    EXPECT_EQ(*c.problem.lyap_matrix, Matrix::Identity(1, 1));
    EXPECT_EQ(c.problem.far_field->radius, 10.0);
    EXPECT_EQ(c.sigmoid, SigmoidSpec::kesten(1.0));
    EXPECT_EQ(c.schedule, StepSchedule::reciprocal(1.0));
    EXPECT_EQ(c.init.x0, Vector::Ones(1));
    EXPECT_EQ(c.init.s0, 1.0);
    EXPECT_EQ(c.init.s1, 1.0);
    EXPECT_EQ(c.horizon, 10000);
    EXPECT_EQ(c.checkpoints, (std::vector<std::int64_t>{10, 100, 1000, 10000}));
    EXPECT_EQ(c.e0.method, E0Choice::automatic);
    EXPECT_EQ(c.e0.n_samples, 1000000);
    EXPECT_EQ(c.tolerances.normality.cov_rel_err, 0.15);
    EXPECT_EQ(c.tolerances.normality.ks_coefficient, 1.63);
    EXPECT_EQ(c.tolerances.max_diverged_fraction, 0.01);
    EXPECT_EQ(parse_config("{}"), c);
}

TEST(ParseConfig, NegativeUPlusCitesB41) {
    const std::string msg = config_error(R"({"sigmoid": {"family": "kesten", "u_plus": -1}})");
    EXPECT_NE(msg.find("B4.1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("u_plus"), std::string::npos) << msg;
    EXPECT_NE(config_error(R"({"sigmoid": {"family": "smooth", "u_plus": 0}})").find("B4.1"), std::string::npos);
    EXPECT_NE(config_error(R"({"sigmoid": {"family": "constant", "u_plus": 0}})").find("B4.1"), std::string::npos);
    EXPECT_NE(config_error(R"({"sigmoid": {"family": "plakhov_almeida", "u_minus": 0.5}})").find("B4.1"),
              std::string::npos);
}

TEST(ParseConfig, SchemaViolationsNameKeyAndType) {
    EXPECT_EQ(config_error(R"({"horizon": "ten"})"), "horizon: expected integer");
    EXPECT_EQ(config_error(R"({"problem": {"name": "linear", "A": [[1, "x"]]}})"), "problem.A[0][1]: expected number");
    EXPECT_EQ(config_error(R"({"problem": {"nmae": "linear"}})"), "problem.nmae: unknown key");
    EXPECT_EQ(config_error(R"({"extra": 1})"), "extra: unknown key");
    EXPECT_EQ(config_error(R"({"sigmoid": {"family": "kesten", "beta": 1}})"), "sigmoid.beta: unknown key");
    EXPECT_EQ(config_error(R"({"emit": {"trajectory": 1}})"), "emit.trajectory: expected boolean");
    EXPECT_NE(config_error(R"({"problem": {"name": "quartic"}})").find("problem.name"), std::string::npos);
    EXPECT_NE(config_error("{").find("well-formed"), std::string::npos);
    EXPECT_NE(config_error(R"({"checkpoints": [10, 5]})").find("checkpoints"), std::string::npos);
    EXPECT_NE(config_error(R"({"horizon": 100, "checkpoints": [1000]})").find("checkpoints"), std::string::npos);
    EXPECT_NE(config_error(R"({"init": {"x0": [1, 2]}})").find("init.x0"), std::string::npos);
    EXPECT_NE(config_error(R"({"schedule": {"family": "power", "p": -1}})").find("B2.1"), std::string::npos);
    EXPECT_NE(config_error(R"({"e0": {"method": "declared", "value": -1}})").find("B4.2"), std::string::npos);
}

TEST(ParseConfig, RoundTripsLosslessly) {
    const std::vector<std::string> docs{
        "{}",
        R"({"problem": {"name": "tanh", "A": [[2, 0.5], [0, 1.5]], "root": [0.1, -0.3],
            "noise": {"kind": "uniform_ball", "radius": 0.7}, "b32": null},
            "sigmoid": {"family": "smooth", "u_minus": -0.25, "u_plus": 2, "beta": 0.3},
            "schedule": {"family": "power", "gamma0": 0.5, "p": 0.75},
            "init": {"x0": [1e-3, 2.5], "s0": 0.0, "s1": 3.5}, "horizon": 777, "n_replicates": 9,
            "master_seed": 18446744073709551615, "checkpoints": [1, 7, 777], "couple_comparator": true,
            "comparator_noise": "independent", "record_stride": 3, "divergence_bound": 1e9,
            "e0": {"method": "monte_carlo", "n_samples": 1000},
            "validation": {"r_min": 0.01, "descent_step_fractions": [0.3, 0.6]},
            "emit": {"summary": false}, "tolerances": {"cov_rel_err": 0.2, "min_replicates_for_normality": 50}})",
        R"({"problem": {"name": "cubic1d", "a": 0.1234567890123456789, "c": 3, "root": -0.1, "lyap_matrix": null,
            "noise": {"kind": "scaled_rademacher", "scales": [0.3]}},
            "sigmoid": {"family": "plakhov_almeida", "u_minus": -0.1, "at_zero": "midpoint"},
            "schedule": {"family": "constant", "gamma0": 0.1}, "e0": {"value": 0.3}})",
    };
    for (const auto& doc : docs) {
        const RunConfig a = parse_config(doc);
        const std::string text = serialize_config(a);
        const RunConfig b = parse_config(text);
        EXPECT_TRUE(a == b) << text;
        EXPECT_EQ(serialize_config(b), text);
    }
    EXPECT_EQ(parse_config(docs[1]).master_seed, 18446744073709551615ull);
    EXPECT_FALSE(parse_config(docs[2]).problem.lyap_matrix.has_value());
    EXPECT_EQ(parse_config(docs[2]).e0.method, E0Choice::declared);
}

TEST(ParseConfig, ShippedConfigsParse) {
    for (const auto& entry : fs::directory_iterator(ADAPTIX_CONFIG_DIR)) {
        if (entry.path().extension() != ".json") continue;
        EXPECT_NO_THROW(parse_config(slurp(entry.path()))) << entry.path();
    }
}

TEST(Format, SeventeenDigits) {
    EXPECT_EQ(format_number(0.1), "0.10000000000000001");
    EXPECT_EQ(format_number(1.0), "1");
    EXPECT_EQ(format_number(std::nan("")), "nan");
    EXPECT_EQ(std::stod(format_number(1.0 / 3.0)), 1.0 / 3.0);
}

TEST(CmdPredict, ScalarDeclaredE0) {
    const auto out = scratch_dir("predict_scalar");
    const auto cfg = config(R"({"problem": {"name": "linear", "A": [[2]]}, "e0": {"method": "declared", "value": 1}})", out);
    EXPECT_EQ(cmd_predict(cfg).exit_code, kExitOk);
    const auto j = json::parse(slurp(out / "prediction.json"));
    EXPECT_NEAR(j["V"][0][0].get<double>(), 1.0 / 3.0, 1e-12);
    EXPECT_EQ(j["W"][0][0].get<double>(), -1.5);
    EXPECT_TRUE(j["stable"].get<bool>());
    std::set<std::string> keys;
    for (const auto& [k, _] : j.items()) keys.insert(k);
    EXPECT_EQ(keys, (std::set<std::string>{"e0", "e0_stderr", "W", "V", "stable", "eigen_real_parts", "oracle_max_abs_diff"}));
    EXPECT_TRUE(fs::exists(out / "config.effective.json"));
    EXPECT_TRUE(parse_config(slurp(out / "config.effective.json")) == cfg);
}

TEST(CmdPredict, IdentityJacobian) {
    const auto out = scratch_dir("predict_identity");
    const auto cfg = config(R"({"problem": {"name": "linear", "A": [[1, 0], [0, 1]]}, "e0": {"value": 1}})", out);
    EXPECT_EQ(cmd_predict(cfg).exit_code, kExitOk);
    const auto j = json::parse(slurp(out / "prediction.json"));
    EXPECT_LE(j["oracle_max_abs_diff"].get<double>(), 1e-8);
    EXPECT_NEAR(j["V"][0][0].get<double>(), 1.0, 1e-14);
    EXPECT_EQ(j["V"][0][1].get<double>(), 0.0);
}

TEST(CmdPredict, UnstableOmitsV) {
    const auto out = scratch_dir("predict_unstable");
    const auto cfg = config(R"({"problem": {"name": "linear", "A": [[0.4]]}, "e0": {"value": 1}})", out);
    const auto res = cmd_predict(cfg);
    EXPECT_EQ(res.exit_code, kExitAssumptionFailed);
    const auto j = json::parse(slurp(out / "prediction.json"));
    EXPECT_FALSE(j["stable"].get<bool>());
    EXPECT_FALSE(j.contains("V"));
    EXPECT_FALSE(j.contains("oracle_max_abs_diff"));
}

TEST(CmdRun, TrajectoryCsv) {
    const auto out = scratch_dir("run");
    const auto cfg = config(R"({"problem": {"name": "linear", "A": [[1, 0], [0, 2]]}, "horizon": 95, "record_stride": 10})", out);
    EXPECT_EQ(cmd_run(cfg).exit_code, kExitOk);
    const std::string csv = slurp(out / "trajectory.csv");
    EXPECT_EQ(first_line(csv), "t,s,gamma,x_0,x_1");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 11);
    EXPECT_NE(csv.find("\n0,1,1,1,1\n"), std::string::npos);
    // Replay must be byte-identical.
    const auto out2 = scratch_dir("run2");
    auto cfg2 = cfg;
    cfg2.output_dir = out2.string();
    cmd_run(cfg2);
    EXPECT_EQ(slurp(out2 / "trajectory.csv"), csv);
}

TEST(CmdRun, DivergenceIsANumericError) {
    const auto res = guarded([&] {
        return cmd_run(config(R"({"problem": {"name": "linear", "A": [[-1]]}, "divergence_bound": 1e3})",
                              scratch_dir("run_div")));
    });
    EXPECT_EQ(res.exit_code, kExitNumericError);
}

TEST(CmdReplicate, ArtifactsAndDeterminism) {
    const std::string doc = R"({"horizon": 1000, "n_replicates": 50, "master_seed": 5, "couple_comparator": true})";
    const auto a = scratch_dir("rep_a"), b = scratch_dir("rep_b");
    EXPECT_EQ(cmd_replicate(config(doc, a), 1).exit_code, kExitOk);
    EXPECT_EQ(cmd_replicate(config(doc, b), 8).exit_code, kExitOk);
    const std::string csv = slurp(a / "checkpoints.csv");
    EXPECT_EQ(first_line(csv), kCheckpointsHeader);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 3);
    EXPECT_EQ(slurp(b / "checkpoints.csv"), csv);
    EXPECT_EQ(slurp(b / "summary.json"), slurp(a / "summary.json"));
    const auto s = json::parse(slurp(a / "summary.json"));
    EXPECT_EQ(s["n_replicates"].get<int>(), 50);
    EXPECT_EQ(s["status"].get<std::string>(), "ok");
    EXPECT_FALSE(s["normality_final"]["enforced"].get<bool>());
    EXPECT_TRUE(s.contains("coupling"));
}

TEST(CmdReplicate, DivergedReplicatesExitNonzeroWithCounts) {
    const auto out = scratch_dir("rep_div");
    const auto cfg = config(R"({"problem": {"name": "linear", "A": [[-1]]}, "horizon": 100, "n_replicates": 10,
                               "divergence_bound": 1e4})", out);
    const auto res = cmd_replicate(cfg, 2);
    EXPECT_EQ(res.exit_code, kExitNumericError);
    const auto s = json::parse(slurp(out / "summary.json"));
    EXPECT_EQ(s["n_diverged"].get<int>(), 10);
    EXPECT_EQ(s["status"].get<std::string>(), "diverged");
}

TEST(CmdReplicate, EnforcedNormalityFailureExitsWithStatisticalCode) {
    // A power schedule with p = 0.75 does not have the 1/t rate, so the
    // predicted covariance is wrong and the enforced check fails.
    const auto out = scratch_dir("rep_norm");
    const auto cfg = config(R"({"schedule": {"family": "power", "gamma0": 1, "p": 0.75}, "horizon": 1000,
                               "n_replicates": 20, "tolerances": {"min_replicates_for_normality": 10}})", out);
    EXPECT_EQ(cmd_replicate(cfg, 1).exit_code, kExitStatisticalFailure);
    EXPECT_EQ(json::parse(slurp(out / "summary.json"))["status"].get<std::string>(), "normality_failed");
}

TEST(CmdValidate, WritesEveryItem) {
    const auto out = scratch_dir("validate");
    const auto cfg = config(R"({"schedule": {"family": "constant", "gamma0": 0.5},
                               "validation": {"descent_steps": 2000, "e0_samples": 1000}})", out);
    EXPECT_EQ(cmd_validate(cfg).exit_code, kExitAssumptionFailed);
    const auto j = json::parse(slurp(out / "validation.json"));
    ASSERT_EQ(j["items"].size(), kAssumptionIds.size());
    for (std::size_t i = 0; i < kAssumptionIds.size(); ++i) EXPECT_EQ(j["items"][i]["id"].get<std::string>(), kAssumptionIds[i]);
    EXPECT_EQ(j["items"][4]["id"].get<std::string>(), "B2.3");
    EXPECT_EQ(j["items"][4]["verdict"].get<std::string>(), "fail");
    EXPECT_TRUE(j["any_failed"].get<bool>());
}

TEST(Guarded, MapsExceptionsToExitCodes) {
    EXPECT_EQ(guarded([]() -> CommandResult { throw ConfigError("x"); }).exit_code, kExitConfigError);
    EXPECT_EQ(guarded([]() -> CommandResult { throw DimensionError("x"); }).exit_code, kExitConfigError);
    EXPECT_EQ(guarded([]() -> CommandResult { throw AssumptionError("B3.3", "x"); }).exit_code, kExitAssumptionFailed);
    EXPECT_EQ(guarded([]() -> CommandResult { throw NumericError("x"); }).exit_code, kExitNumericError);
}

// Byte-level golden files for a small fixed configuration. Set
// ADAPTIX_REGEN_GOLDEN=1 to rewrite them after an intentional format change.
TEST(Golden, ArtifactsAreByteStable) {
    const fs::path golden = fs::path(ADAPTIX_GOLDEN_DIR) / "cli";
    const std::string doc = slurp(golden / "config.json");
    ASSERT_FALSE(doc.empty());
    const auto out = scratch_dir("golden");
    const auto cfg = config(doc, out);
    ASSERT_EQ(cmd_predict(cfg).exit_code, kExitOk);
    ASSERT_EQ(cmd_run(cfg).exit_code, kExitOk);
    ASSERT_EQ(cmd_replicate(cfg, 4).exit_code, kExitOk);
    ASSERT_EQ(cmd_validate(cfg).exit_code, kExitOk);
    for (const char* name : {"prediction.json", "trajectory.csv", "checkpoints.csv", "summary.json", "validation.json"}) {
        if (std::getenv("ADAPTIX_REGEN_GOLDEN")) {
            fs::copy_file(out / name, golden / name, fs::copy_options::overwrite_existing);
            continue;
        }
        EXPECT_EQ(slurp(out / name), slurp(golden / name)) << name;
    }
}
