#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "mvaal/harness/harness.hpp"
#include "mvaal/util/hash.hpp"

namespace mvaal::harness {

using nlohmann::json;

namespace {

// Reads typed members of one config section and rejects anything unread.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError(where() + "expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
        if (!v.is_number_integer()) throw ConfigError("");
        if constexpr (std::is_unsigned_v<T>)
          if (v.get<std::int64_t>() < 0) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("");
      }
      out = v.get<T>();
    } catch (const std::exception&) {
      throw ConfigError(where() + key + ": expected " + type_name<T>() + ", got " + v.dump());
    }
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, _] : j_.items())
      if (!seen_.count(k)) throw ConfigError(where() + "unknown key '" + k + "'");
  }

  std::string path(const char* key) const { return (name_.empty() ? "" : name_ + ".") + key; }

 private:
  std::string where() const { return name_.empty() ? "config: " : "config." + name_ + ": "; }
  template <class T>
  static std::string type_name() {
    if constexpr (std::is_same_v<T, double>) return "a number";
    else if constexpr (std::is_same_v<T, bool>) return "a boolean";
    else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) return "a nonnegative integer";
    else if constexpr (std::is_integral_v<T>) return "an integer";
    else if constexpr (std::is_same_v<T, std::string>) return "a string";
    else return "a list";
  }

  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

json task_json(const task::TaskSpec& t) {
  return {{"kind", task::to_string(t.kind)},  {"num_classes", t.num_classes},
          {"epochs", t.epochs},               {"batch_size", t.batch_size},
          {"learning_rate", t.learning_rate}, {"optimizer", nn::to_string(t.optimizer)},
          {"width", t.width}};
}

json sampler_json(const sampler::SamplerConfig& s) {
  return {{"latent_dim", s.latent_dim}, {"gamma1", s.gamma1},         {"gamma2", s.gamma2},
          {"gamma3", s.gamma3},         {"beta_kl", s.beta_kl},       {"lambda_gp", s.lambda_gp},
          {"lr_vae", s.lr_vae},         {"lr_disc", s.lr_disc},       {"epochs", s.epochs},
          {"batch_size", s.batch_size}, {"width", s.width},           {"disc_hidden", s.disc_hidden},
          {"optimizer", nn::to_string(s.optimizer)}};
}

ExperimentConfig desk_defaults() { return ExperimentConfig{}; }

}  // namespace

json to_json(const ExperimentConfig& c) {
  json j;
  j["dataset"] = c.dataset_path ? json{{"path", c.dataset_path->string()}}
                                : json{{"spec", synth::to_json(c.dataset)}};
  j["task"] = task_json(c.task);
  j["samplers"] = c.samplers;
  j["sampler"] = sampler_json(c.sampler);
  j["schedule"] = {{"initial", c.schedule.initial}, {"b", c.schedule.b}, {"rounds", c.schedule.rounds}};
  j["seeds"] = c.seeds;
  j["output"] = c.output.string();
  j["oracle"] = {{"kind", c.oracle.kind}, {"timeout_s", c.oracle.timeout_s}, {"poll_s", c.oracle.poll_s}};
  j["gamma3_sweep"] = c.gamma3_sweep ? json(*c.gamma3_sweep) : json(nullptr);
  j["jobs"] = c.jobs;
  j["fresh_sampler_each_round"] = c.fresh_sampler_each_round;
  return j;
}

json default_config_json() { return to_json(desk_defaults()); }

ExperimentConfig config_from_json(const json& j, bool check_schedule) {
  ExperimentConfig c = desk_defaults();
  Section top(j, "");

  if (const json* d = top.sub("dataset")) {
    Section ds(*d, "dataset");
    if (const json* p = ds.sub("path"); p && !p->is_null()) {
      if (!p->is_string()) throw ConfigError("config.dataset.path: expected a string");
      c.dataset_path = p->get<std::string>();
    }
    if (const json* s = ds.sub("spec"); s && !s->is_null()) {
      try {
        c.dataset = synth::spec_from_json(*s);
      } catch (const std::exception& e) {
        throw ConfigError(std::string("config.dataset.spec: ") + e.what());
      }
    }
    ds.finish();
  }

  if (const json* t = top.sub("task")) {
    Section ts(*t, "task");
    std::string kind = task::to_string(c.task.kind), opt = nn::to_string(c.task.optimizer);
    ts.get("kind", kind);
    ts.get("num_classes", c.task.num_classes);
    ts.get("epochs", c.task.epochs);
    ts.get("batch_size", c.task.batch_size);
    ts.get("learning_rate", c.task.learning_rate);
    ts.get("optimizer", opt);
    ts.get("width", c.task.width);
    ts.finish();
    try {
      c.task.kind = task::task_kind_from_string(kind);
      c.task.optimizer = nn::optimizer_kind_from_string(opt);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config.task: ") + e.what());
    }
  }

  if (const json* s = top.sub("samplers")) {
    if (!s->is_array() || s->empty()) throw ConfigError("config.samplers: expected a nonempty list");
    c.samplers.clear();
    for (const auto& v : *s) {
      if (!v.is_string()) throw ConfigError("config.samplers: expected sampler names");
      const auto name = v.get<std::string>();
      try {
        al::sampler_kind_from_string(name);
      } catch (const std::exception& e) {
        throw ConfigError(std::string("config.samplers: ") + e.what());
      }
      if (std::find(c.samplers.begin(), c.samplers.end(), name) != c.samplers.end())
        throw ConfigError("config.samplers: '" + name + "' listed twice");
      c.samplers.push_back(name);
    }
  }

  if (const json* s = top.sub("sampler")) {
    Section ss(*s, "sampler");
    auto& sc = c.sampler;
    std::string opt = nn::to_string(sc.optimizer);
    ss.get("latent_dim", sc.latent_dim);
    ss.get("gamma1", sc.gamma1);
    ss.get("gamma2", sc.gamma2);
    ss.get("gamma3", sc.gamma3);
    ss.get("beta_kl", sc.beta_kl);
    ss.get("lambda_gp", sc.lambda_gp);
    ss.get("lr_vae", sc.lr_vae);
    ss.get("lr_disc", sc.lr_disc);
    ss.get("epochs", sc.epochs);
    ss.get("batch_size", sc.batch_size);
    ss.get("width", sc.width);
    ss.get("disc_hidden", sc.disc_hidden);
    ss.get("optimizer", opt);
    ss.finish();
    try {
      sc.optimizer = nn::optimizer_kind_from_string(opt);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config.sampler: ") + e.what());
    }
  }

  if (const json* s = top.sub("schedule")) {
    Section ss(*s, "schedule");
    ss.get("initial", c.schedule.initial);
    ss.get("b", c.schedule.b);
    ss.get("rounds", c.schedule.rounds);
    ss.finish();
  }

  if (const json* s = top.sub("seeds")) {
    if (!s->is_array() || s->empty()) throw ConfigError("config.seeds: expected a nonempty list");
    c.seeds.clear();
    for (const auto& v : *s) {
      if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
        throw ConfigError("config.seeds: expected nonnegative integers");
      c.seeds.push_back(v.get<std::uint64_t>());
    }
    std::set<std::uint64_t> uniq(c.seeds.begin(), c.seeds.end());
    if (uniq.size() != c.seeds.size()) throw ConfigError("config.seeds: duplicate seed");
  }

  std::string output = c.output.string();
  top.get("output", output);
  c.output = output;

  if (const json* o = top.sub("oracle")) {
    Section os(*o, "oracle");
    os.get("kind", c.oracle.kind);
    os.get("timeout_s", c.oracle.timeout_s);
    os.get("poll_s", c.oracle.poll_s);
    os.finish();
  }

  if (const json* g = top.sub("gamma3_sweep"); g && !g->is_null()) {
    if (!g->is_array() || g->empty()) throw ConfigError("config.gamma3_sweep: expected a nonempty list");
    std::vector<double> v;
    for (const auto& x : *g) {
      if (!x.is_number()) throw ConfigError("config.gamma3_sweep: expected numbers");
      v.push_back(x.get<double>());
    }
    c.gamma3_sweep = v;
  }

  top.get("jobs", c.jobs);
  top.get("fresh_sampler_each_round", c.fresh_sampler_each_round);
  top.finish();

  // cross-field checks
  if (c.oracle.kind != "simulated" && c.oracle.kind != "remote")
    throw ConfigError("config.oracle.kind: expected 'simulated' or 'remote', got '" + c.oracle.kind + "'");
  if (!(c.oracle.timeout_s > 0) || !(c.oracle.poll_s > 0))
    throw ConfigError("config.oracle: timeout_s and poll_s must be positive");
  if (c.oracle.kind == "remote" && c.task.kind == task::TaskKind::kSegmentation)
    throw ConfigError("config.oracle: segmentation rounds need the simulated oracle");
  if (c.gamma3_sweep) {
    if (std::find(c.samplers.begin(), c.samplers.end(), "mvaal") == c.samplers.end())
      throw ConfigError("config.gamma3_sweep: only valid when 'mvaal' is among the samplers");
    for (double g : *c.gamma3_sweep)
      if (!(g >= 0) || !std::isfinite(g)) throw ConfigError("config.gamma3_sweep: values must be >= 0");
  }
  if (c.jobs < 1) throw ConfigError("config.jobs: must be >= 1");
  if (c.task.epochs < 1 || c.task.batch_size < 1 || c.task.width < 1 || c.task.num_classes < 1)
    throw ConfigError("config.task: sizes must be positive");
  if (!c.dataset_path) {
    c.task.image_size = c.dataset.image_size;
    const auto classes = c.dataset.classes.empty() ? std::size_t{5} : c.dataset.classes.size();
    if (static_cast<std::size_t>(c.task.num_classes) != classes)
      throw ConfigError("config.task.num_classes: dataset has " + std::to_string(classes) + " classes");
  }
  c.sampler.image_size = c.task.image_size;
  try {
    auto probe = c.sampler;
    probe.gamma3 = 0.0;
    probe.mode = sampler::SamplerMode::kVaal;
    sampler::validate(probe);
    if (c.sampler.gamma3 < 0) throw ConfigError("gamma3 must be >= 0");
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config.sampler: ") + e.what());
  }
  if (check_schedule && !c.dataset_path) {
    const auto sizes = synth::split_sizes(c.dataset.n_samples, c.dataset.split_ratio);
    try {
      al::validate(c.schedule, sizes.train);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config.schedule: ") + e.what());
    }
  }
  return c;
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json* node = &j;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("--set: malformed key '" + key + "'");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    if (!node->contains(part) || !(*node)[part].is_object()) (*node)[part] = json::object();
    node = &(*node)[part];
    start = dot + 1;
  }
}

ExperimentConfig load_config(const std::optional<std::filesystem::path>& file,
                             const std::vector<std::string>& overrides, bool check_schedule) {
  json j = json::object();
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ConfigError("cannot read config file " + file->string());
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("config file " + file->string() + " is not valid JSON: " + e.what());
    }
  }
  for (const auto& o : overrides) apply_override(j, o);
  // switching to a stored dataset drops the generator spec
  if (j.contains("dataset") && j["dataset"].is_object() && j["dataset"].contains("path") &&
      !j["dataset"]["path"].is_null())
    j["dataset"].erase("spec");
  return config_from_json(j, check_schedule);
}

std::string config_hash(const ExperimentConfig& c) {
  json j = to_json(c);
  j.erase("output");
  j.erase("jobs");
  return sha256_hex(j.dump());
}

std::vector<al::Arm> comparison_arms(const ExperimentConfig& c) {
  std::vector<al::Arm> arms;
  for (const auto& name : c.samplers) {
    al::Arm a;
    a.tag = name;
    a.kind = al::sampler_kind_from_string(name);
    a.config = c.sampler;
    if (a.kind == al::SamplerKind::kVaal) {
      a.config.mode = sampler::SamplerMode::kVaal;
      a.config.gamma3 = 0.0;
    } else {
      a.config.mode = sampler::SamplerMode::kMvaal;
    }
    arms.push_back(a);
  }
  return arms;
}

std::vector<al::Arm> gamma3_arms(const ExperimentConfig& c) {
  if (std::find(c.samplers.begin(), c.samplers.end(), "mvaal") == c.samplers.end())
    throw ConfigError("ablate-gamma3 needs 'mvaal' among the samplers");
  std::vector<al::Arm> arms;
  for (double g : c.gamma3_sweep.value_or(kDefaultGamma3Sweep)) {
    al::Arm a;
    std::ostringstream tag;
    tag << "mvaal-g" << g;
    if (g == std::floor(g)) tag << ".0";
    a.tag = tag.str();
    a.kind = al::SamplerKind::kMvaal;
    a.config = c.sampler;
    a.config.mode = sampler::SamplerMode::kMvaal;
    a.config.gamma3 = g;
    arms.push_back(a);
  }
  return arms;
}

}  // namespace mvaal::harness
