#include "loopstack/harness/run_config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "loopstack/error.hpp"
#include "loopstack/model/weight_file.hpp"

namespace loopstack::harness {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

bool takes_K(const std::string& name) { return name != "euler_sched" && name != "poly_blend" && name != "rk_generic"; }

std::vector<Strategy> expand_strategy(const json& s, const std::vector<std::size_t>& Ks) {
  if (!s.is_object() || !s.contains("name")) throw ConfigError("loop.strategies: each entry needs a name");
  const std::string name = s.at("name").get<std::string>();
  std::vector<Strategy> out;
  if (s.contains("K") && s.at("K").is_array()) {
    for (const auto& k : s.at("K")) {
      json one = s;
      one["K"] = k;
      out.push_back(strategy_from_json(one));
    }
  } else if (s.contains("K") || !takes_K(name)) {
    out.push_back(strategy_from_json(s));
  } else {
    if (Ks.empty()) throw ConfigError("strategy '" + name + "': missing K");
    for (std::size_t k : Ks) out.push_back(strategy_from_json(s, k));
  }
  return out;
}

LoopSpec loop_from_json(const json& j) {
  reject_unknown(j,
                 {"window", "depth_fraction", "width", "mode", "K", "strategy", "strategies", "cache_strategy",
                  "decode_mode"},
                 "loop");
  LoopSpec l;
  if (j.contains("window")) {
    const auto w = j.at("window").get<std::vector<std::size_t>>();
    if (w.size() != 2) throw ConfigError("loop.window: expected [a, b]");
    l.window = LoopWindow{w[0], w[1]};
    if (j.contains("depth_fraction") || j.contains("width"))
      throw ConfigError("loop: give either window or depth_fraction/width, not both");
  }
  l.depth_fraction = j.value("depth_fraction", l.depth_fraction);
  l.width = j.value("width", l.width);
  if (l.width == 0) throw ConfigError("loop.width must be positive");
  if (j.contains("mode")) l.mode = iteration_mode_from_string(j.at("mode").get<std::string>());

  std::vector<std::size_t> Ks;
  if (j.contains("K")) {
    if (j.at("K").is_array())
      Ks = j.at("K").get<std::vector<std::size_t>>();
    else
      Ks.push_back(j.at("K").get<std::size_t>());
  }
  if (j.contains("strategy") && j.contains("strategies")) throw ConfigError("loop: give strategy or strategies");
  if (j.contains("strategy")) {
    l.strategies = expand_strategy(j.at("strategy"), Ks);
  } else if (j.contains("strategies")) {
    if (!j.at("strategies").is_array()) throw ConfigError("loop.strategies: expected an array");
    for (const auto& s : j.at("strategies")) {
      auto more = expand_strategy(s, Ks);
      l.strategies.insert(l.strategies.end(), more.begin(), more.end());
    }
  }
  for (const Strategy& s : l.strategies) validate(s);

  if (j.contains("cache_strategy")) l.cache = cache_strategy_from_string(j.at("cache_strategy").get<std::string>());
  if (j.contains("decode_mode")) {
    const json& d = j.at("decode_mode");
    if (d.is_string()) {
      const std::string s = d.get<std::string>();
      if (s == "full")
        l.decode = DecodeMode::full();
      else if (s == "bypass")
        l.decode = DecodeMode::bypass();
      else
        throw ConfigError("loop.decode_mode: unknown mode '" + s + "'");
    } else {
      reject_unknown(d, {"first_n"}, "loop.decode_mode");
      l.decode = DecodeMode::first_n(d.at("first_n").get<std::size_t>());
    }
  }
  return l;
}

FidelityTask fidelity_from_json(const json& j, const std::string& where) {
  reject_unknown(j, {"probes", "prompt_len", "reference_steps"}, where);
  FidelityTask t;
  t.probes = j.value("probes", t.probes);
  t.prompt_len = j.value("prompt_len", t.prompt_len);
  t.reference_steps = j.value("reference_steps", t.reference_steps);
  if (t.prompt_len == 0 || t.reference_steps == 0) throw ConfigError(where + ": prompt_len and reference_steps must be positive");
  return t;
}

SweepTask sweep_from_json(const json& j) {
  reject_unknown(j, {"probes", "prompt_len", "reference_steps", "windows", "divergence_threshold"}, "task.sweep");
  SweepTask t;
  json probe = json::object();
  for (const char* k : {"probes", "prompt_len", "reference_steps"})
    if (j.contains(k)) probe[k] = j.at(k);
  t.probe = fidelity_from_json(probe, "task.sweep");
  if (j.contains("windows")) {
    for (const auto& w : j.at("windows")) {
      const auto ab = w.get<std::vector<std::size_t>>();
      if (ab.size() != 2) throw ConfigError("task.sweep.windows: expected [a, b] pairs");
      t.windows.push_back({ab[0], ab[1]});
    }
  }
  t.divergence_threshold = j.value("divergence_threshold", t.divergence_threshold);
  return t;
}

GenTask gen_from_json(const json& j) {
  reject_unknown(j, {"prompt", "prompt_len", "max_new", "sampler", "debug_disable_crop"}, "task.gen");
  GenTask t;
  if (j.contains("prompt")) t.prompt = j.at("prompt").get<std::vector<std::uint32_t>>();
  t.prompt_len = j.value("prompt_len", t.prompt_len);
  t.max_new = j.value("max_new", t.max_new);
  t.debug_disable_crop = j.value("debug_disable_crop", false);
  if (j.contains("sampler")) {
    const json& s = j.at("sampler");
    reject_unknown(s, {"kind", "temperature"}, "task.gen.sampler");
    const std::string kind = s.value("kind", std::string("greedy"));
    if (kind == "greedy") {
      t.sampler = Sampler::greedy();
    } else if (kind == "temperature") {
      t.sampler = Sampler::with_temperature(s.value("temperature", 1.0), 0);
      if (!(t.sampler.temperature > 0.0)) throw ConfigError("task.gen.sampler: temperature must be positive");
    } else {
      throw ConfigError("task.gen.sampler: unknown kind '" + kind + "'");
    }
  }
  if (t.prompt.empty() && t.prompt_len == 0) throw ConfigError("task.gen: empty prompt");
  return t;
}

ToyTask toy_from_json(const json& j) {
  reject_unknown(j,
                 {"n_train", "n_test", "noise", "hidden", "lr", "steps", "warmup", "resolution", "K",
                  "grad_check_points"},
                 "task.toy");
  ToyTask t;
  toy::ToyConfig& c = t.config;
  c.n_train = j.value("n_train", c.n_train);
  c.n_test = j.value("n_test", c.n_test);
  c.noise = j.value("noise", c.noise);
  c.hidden = j.value("hidden", c.hidden);
  c.lr = j.value("lr", c.lr);
  c.steps = j.value("steps", c.steps);
  c.warmup = j.value("warmup", c.warmup);
  t.resolution = j.value("resolution", t.resolution);
  if (j.contains("K")) t.Ks = j.at("K").get<std::vector<std::size_t>>();
  t.grad_check_points = j.value("grad_check_points", t.grad_check_points);
  if (t.resolution == 0) throw ConfigError("task.toy.resolution must be positive");
  for (std::size_t k : t.Ks)
    if (k == 0) throw ConfigError("task.toy.K entries must be positive");
  return t;
}

ModelSource model_from_json(const json& j) {
  reject_unknown(j, {"path", "synthetic"}, "model");
  ModelSource m;
  if (j.contains("path") == j.contains("synthetic")) throw ConfigError("model: give exactly one of path / synthetic");
  if (j.contains("path")) {
    m.path = j.at("path").get<std::string>();
  } else {
    const json& s = j.at("synthetic");
    reject_unknown(s, {"config", "seed", "init"}, "model.synthetic");
    SyntheticModel sm;
    sm.config = model_config_from_json(s.at("config"));
    if (s.contains("seed")) sm.seed = s.at("seed").get<std::uint64_t>();
    if (s.contains("init")) {
      const json& i = s.at("init");
      reject_unknown(i, {"attn_out_scale", "mlp_out_scale", "router_scale"}, "model.synthetic.init");
      sm.init.attn_out_scale = i.value("attn_out_scale", sm.init.attn_out_scale);
      sm.init.mlp_out_scale = i.value("mlp_out_scale", sm.init.mlp_out_scale);
      sm.init.router_scale = i.value("router_scale", sm.init.router_scale);
    }
    m.synthetic = sm;
  }
  return m;
}

}  // namespace

LoopWindow LoopSpec::resolve_window(std::size_t n_layers) const {
  const LoopWindow w = window ? *window : default_window(n_layers, width, depth_fraction);
  w.validate(n_layers);
  return w;
}

LoopConfig LoopSpec::loop_config(std::size_t n_layers) const {
  LoopConfig c;
  c.window = resolve_window(n_layers);
  c.mode = mode;
  if (!strategies.empty()) c.strategy = strategies.front();
  c.cache = cache;
  c.decode = decode;
  return c;
}

RunConfig run_config_from_json(const json& j) {
  reject_unknown(j, {"model", "loop", "task", "output", "deterministic", "seed"}, "config");
  RunConfig c;
  try {
    if (j.contains("model")) c.model = model_from_json(j.at("model"));
    if (j.contains("loop")) c.loop = loop_from_json(j.at("loop"));
    if (j.contains("task")) {
      const json& t = j.at("task");
      reject_unknown(t, {"fidelity", "sweep", "gen", "cache_audit", "toy", "make_model"}, "task");
      if (t.contains("fidelity")) c.fidelity = fidelity_from_json(t.at("fidelity"), "task.fidelity");
      if (t.contains("sweep")) c.sweep = sweep_from_json(t.at("sweep"));
      if (t.contains("gen") && t.contains("cache_audit")) throw ConfigError("task: gen and cache_audit share one section; give one");
      if (t.contains("gen")) c.gen = gen_from_json(t.at("gen"));
      if (t.contains("cache_audit")) c.gen = gen_from_json(t.at("cache_audit"));
      if (t.contains("toy")) c.toy = toy_from_json(t.at("toy"));
      if (t.contains("make_model")) {
        reject_unknown(t.at("make_model"), {"file"}, "task.make_model");
        c.make_model.file = t.at("make_model").value("file", c.make_model.file);
      }
    }
    if (j.contains("output")) c.output_dir = j.at("output").get<std::string>();
    c.deterministic = j.value("deterministic", false);
    c.seed = j.value("seed", std::uint64_t{0});
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

Model load_model(const RunConfig& cfg) {
  if (cfg.model.path) return load_weights(*cfg.model.path);
  if (!cfg.model.synthetic) throw ConfigError("config: this command needs a model section");
  const SyntheticModel& s = *cfg.model.synthetic;
  return make_random_model(s.config, s.seed.value_or(cfg.seed), s.init);
}

std::size_t worker_threads() {
  if (const char* env = std::getenv("LOOPSTACK_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

}  // namespace loopstack::harness
