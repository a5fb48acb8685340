#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <doctest.h>

#include "loopstack/error.hpp"
#include "loopstack/harness/commands.hpp"
#include "loopstack/model/weight_file.hpp"

using namespace loopstack;
using namespace loopstack::harness;
using nlohmann::json;

namespace {

json small_model(std::uint64_t seed = 3) {
  return {{"synthetic",
           {{"config", {{"n_layers", 6}, {"d_model", 32}, {"n_heads", 4}, {"ffn_hidden", 64}, {"vocab_size", 64}}},
            {"seed", seed}}}};
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("loopstack_harness_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config parsing expands strategies over K") {
  const RunConfig cfg = run_config_from_json(
      {{"model", small_model()},
       {"loop",
        {{"window", {1, 3}},
         {"K", {2, 4}},
         {"strategies", {{{"name", "euler"}}, {{"name", "anderson"}, {"K", 8}, {"m", 3}, {"beta", 1.0}},
                         {{"name", "poly_blend"}, {"weights", {0.5, 0.5}}}}},
         {"cache_strategy", "first"},
         {"decode_mode", {{"first_n", 3}}}}},
       {"seed", 5}});
  REQUIRE(cfg.loop.strategies.size() == 4);
  CHECK(loop_count(cfg.loop.strategies[0]) == 2);
  CHECK(loop_count(cfg.loop.strategies[1]) == 4);
  CHECK(std::get<Anderson>(cfg.loop.strategies[2]).m == 3);
  CHECK(std::holds_alternative<PolyBlend>(cfg.loop.strategies[3]));
  CHECK(cfg.loop.cache == CacheStrategy::first);
  CHECK(cfg.loop.decode.kind == DecodeMode::Kind::first_n);
  CHECK(cfg.loop.resolve_window(6) == LoopWindow{1, 3});
  CHECK(cfg.seed == 5);
}

TEST_CASE("config rejects unknown keys and contradictions") {
  const json base{{"model", small_model()}};
  CHECK_NOTHROW(run_config_from_json(base));
  json j = base;
  j["verbose"] = true;
  CHECK_THROWS_AS(run_config_from_json(j), ConfigError);
  j = base;
  j["loop"] = {{"windw", {1, 2}}};
  CHECK_THROWS_AS(run_config_from_json(j), ConfigError);
  j = base;
  j["loop"] = {{"window", {1, 2}}, {"width", 3}};
  CHECK_THROWS_AS(run_config_from_json(j), ConfigError);
  j = base;
  j["loop"] = {{"strategy", {{"name", "euler"}}}};
  CHECK_THROWS_AS(run_config_from_json(j), ConfigError);  // K missing everywhere
  j = base;
  j["task"] = {{"gen", json::object()}, {"cache_audit", json::object()}};
  CHECK_THROWS_AS(run_config_from_json(j), ConfigError);
  j = base;
  j["task"] = {{"toy", {{"resolution", 0}}}};
  CHECK_THROWS_AS(run_config_from_json(j), ConfigError);
  j = base;
  j["model"] = {{"path", "x.lsw"}, {"synthetic", small_model()["synthetic"]}};
  CHECK_THROWS_AS(run_config_from_json(j), ConfigError);
  j = base;
  j["model"]["synthetic"]["config"]["n_heads"] = 5;
  CHECK_THROWS_AS(load_model(run_config_from_json(j)), ConfigError);
}

TEST_CASE("empty strategy list gives an empty sweep") {
  RunConfig cfg = run_config_from_json({{"model", small_model()}, {"loop", {{"window", {2, 3}}}}});
  cfg.output_dir = scratch("empty_sweep");
  const SweepReport r = cmd_sweep(cfg);
  CHECK(r.rows.empty());
  const std::string csv = slurp(cfg.output_dir / "sweep.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1);
}

TEST_CASE("sweep rows cover windows times strategies") {
  RunConfig cfg = run_config_from_json(
      {{"model", small_model()},
       {"loop", {{"window", {2, 3}}, {"K", {2, 4}}, {"strategies", {{{"name", "euler"}}, {{"name", "naive"}}}}}},
       {"task", {{"sweep", {{"probes", 4}, {"prompt_len", 4}, {"reference_steps", 16}, {"windows", {{1, 2}, {3, 4}}}}}}}});
  cfg.deterministic = true;
  cfg.output_dir = scratch("sweep");
  const SweepReport r = cmd_sweep(cfg);
  CHECK(r.rows.size() == 2 * 4);
  CHECK(r.rows[0].window == LoopWindow{1, 2});
  CHECK(r.rows[7].window == LoopWindow{3, 4});
  const std::string csv = slurp(cfg.output_dir / "sweep.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 9);
}

TEST_CASE("exit codes") {
  std::ostringstream log;
  RunConfig cfg = run_config_from_json({{"model", small_model()}, {"loop", {{"window", {2, 9}}}}});
  cfg.output_dir = scratch("exit");
  CHECK(run_command("gen", cfg, log) == kConfigError);
  CHECK(run_command("frobnicate", cfg, log) == kConfigError);

  RunConfig missing = run_config_from_json({{"model", {{"path", "/nonexistent/model.lsw"}}}});
  CHECK(run_command("gen", missing, log) != kOk);

  RunConfig bad = run_config_from_json(
      {{"model", small_model()},
       {"loop", {{"window", {2, 3}}, {"K", 3}, {"strategy", {{"name", "euler"}}}}},
       {"task", {{"cache_audit", {{"prompt_len", 4}, {"max_new", 4}, {"debug_disable_crop", true}}}}}});
  bad.output_dir = scratch("exit_audit");
  CHECK(run_command("cache-audit", bad, log) == kInvariantViolation);

  RunConfig wild = run_config_from_json({{"model", small_model()},
                                         {"task", {{"toy", {{"lr", 1e6}, {"steps", 20}, {"n_train", 16}, {"n_test", 8}}}}}});
  wild.output_dir = scratch("exit_toy");
  CHECK(run_command("toy", wild, log) == kDivergence);
}

TEST_CASE("cache audit logs one line per step") {
  RunConfig cfg = run_config_from_json(
      {{"model", small_model()},
       {"loop", {{"window", {2, 4}}, {"K", 3}, {"mode", "layer"}, {"strategy", {{"name", "heun"}}}}},
       {"task", {{"cache_audit", {{"prompt_len", 5}, {"max_new", 6}}}}}});
  cfg.output_dir = scratch("audit");
  const AuditReport ok = cmd_cache_audit(cfg);
  CHECK(ok.ok);
  REQUIRE(ok.lines.size() == 6);
  CHECK(ok.lines[0] == "prefill: OK, 5 entries/layer, loop-layer lengths [5,5,5]");
  CHECK(ok.lines[5] == "step 5: OK, delta=1/layer/step, loop-layer lengths [10,10,10]");
  CHECK(slurp(cfg.output_dir / "cache_audit.log").find("step 5: OK") != std::string::npos);

  cfg.gen.debug_disable_crop = true;
  cfg.loop.mode = IterationMode::block;
  const AuditReport bad = cmd_cache_audit(cfg);
  CHECK_FALSE(bad.ok);
  CHECK(bad.lines.back().find("FAIL") != std::string::npos);
  CHECK(bad.lines.back().find("iteration 1") != std::string::npos);
}

TEST_CASE("gen writes per-step records") {
  RunConfig cfg = run_config_from_json(
      {{"model", small_model()},
       {"loop", {{"window", {2, 3}}, {"K", 2}, {"strategy", {{"name", "rk4"}}}, {"decode_mode", {{"first_n", 2}}}}},
       {"task", {{"gen", {{"prompt", {1, 2, 3}}, {"max_new", 5}}}}}});
  cfg.output_dir = scratch("gen");
  const GenReport r = cmd_gen(cfg);
  CHECK(r.tokens.size() == 5);
  CHECK(r.window_evals == std::vector<std::size_t>{8, 8, 8, 0, 0});
  const std::string csv = slurp(cfg.output_dir / "gen.csv");
  CHECK(csv.rfind("step,token,looped,window_evals,elapsed_us\n", 0) == 0);
}

TEST_CASE("make-model is deterministic and round-trips") {
  json moe = small_model(9);
  moe["synthetic"]["config"]["moe"] = {{"n_experts", 4}, {"top_k", 2}, {"expert_hidden", 16}};
  moe["synthetic"]["config"]["moe_layer_indices"] = {1, 3};
  for (const json& m : {small_model(9), moe}) {
    RunConfig cfg = run_config_from_json({{"model", m}});
    cfg.output_dir = scratch("make_a");
    const auto a = cmd_make_model(cfg);
    cfg.output_dir = scratch("make_b");
    const auto b = cmd_make_model(cfg);
    CHECK(slurp(a) == slurp(b));
    const Model loaded = load_weights(a);
    const Model direct = load_model(cfg);
    CHECK(loaded.config.moe_layer_indices == direct.config.moe_layer_indices);
    const std::uint32_t toks[3] = {4, 5, 6};
    CHECK(model_forward(loaded, toks) == model_forward(direct, toks));

    RunConfig from_file = run_config_from_json({{"model", {{"path", a.string()}}}});
    CHECK(model_forward(load_model(from_file), toks) == model_forward(direct, toks));
  }
}

TEST_CASE("fidelity: naive degrades with K; anchored beta=1 equals naive K=1") {
  RunConfig cfg = run_config_from_json(
      {{"model", small_model(21)},
       {"loop",
        {{"window", {2, 4}},
         {"strategies",
          {{{"name", "naive"}, {"K", {1, 2, 4, 8}}}, {{"name", "rk_anchored"}, {"K", 3}, {"beta", 1.0}}}}}},
       {"task", {{"fidelity", {{"probes", 8}, {"prompt_len", 6}, {"reference_steps", 32}}}}}});
  const FidelityReport r = cmd_fidelity(cfg, false);
  REQUIRE(r.rows.size() == 5);
  for (std::size_t k = 1; k < 4; ++k) CHECK(r.rows[k].mean_dev > r.rows[k - 1].mean_dev);
  CHECK(r.rows[4].deviations == r.rows[0].deviations);
  CHECK(r.rows[3].fwd_passes == 8);
}
