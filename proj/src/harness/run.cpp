#include <chrono>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <sstream>

#include "mvaal/harness/harness.hpp"
#include "mvaal/util/hash.hpp"

namespace mvaal::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw al::Error("cannot write " + p.string());
    out << text;
  }
  fs::rename(tmp, p);
}

std::string trim(std::string s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
  return s;
}

// Per-arm results are checkpointed so an interrupted run resumes arm-wise.
fs::path arm_csv(const fs::path& dir, const std::string& tag) { return dir / "arms" / (tag + ".csv"); }
fs::path arm_selected(const fs::path& dir, const std::string& tag) {
  return dir / "arms" / (tag + ".selected.json");
}

json selections_json(std::span<const al::RoundRecord> records) {
  json j = json::object();
  for (const auto& r : records) j[r.sampler][std::to_string(r.seed)][std::to_string(r.round)] = r.selected;
  return j;
}

void restore_selections(std::vector<al::RoundRecord>& records, const json& j) {
  for (auto& r : records) {
    const auto seed = std::to_string(r.seed), round = std::to_string(r.round);
    if (j.contains(r.sampler) && j[r.sampler].contains(seed) && j[r.sampler][seed].contains(round))
      r.selected = j[r.sampler][seed][round].get<std::vector<std::int64_t>>();
  }
}

}  // namespace

synth::Dataset obtain_dataset(const ExperimentConfig& c) {
  synth::Dataset ds = c.dataset_path ? synth::load_dataset(*c.dataset_path) : synth::generate_dataset(c.dataset);
  const auto classes = synth::num_classes(ds.spec);
  if (c.task.num_classes != classes)
    throw ConfigError("config.task.num_classes is " + std::to_string(c.task.num_classes) + " but the dataset has " +
                      std::to_string(classes) + " classes");
  return ds;
}

std::string metric_name(task::TaskKind kind) {
  switch (kind) {
    case task::TaskKind::kSegmentation: return "dice";
    case task::TaskKind::kMultilabel: return "map";
    case task::TaskKind::kMulticlass: return "accuracy";
  }
  return "metric";
}

RunOutcome run_experiment(const ExperimentConfig& config, const RunFlags& flags, std::ostream* log) {
  const auto arms = flags.ablate_gamma3 ? gamma3_arms(config) : comparison_arms(config);
  RunOutcome outcome;
  outcome.dir = flags.ablate_gamma3 ? config.output / "ablate-gamma3" : config.output;
  outcome.hash = config_hash(config);
  if (flags.ablate_gamma3) outcome.hash = sha256_hex(outcome.hash + "/ablate-gamma3");
  const fs::path& dir = outcome.dir;

  if (fs::exists(dir / "DONE") && !flags.force) {
    const auto done = trim(read_text(dir / "DONE"));
    if (done != outcome.hash)
      throw ResumeConflict(dir.string() + " holds a finished run with config hash " + done +
                           "; pass --force to overwrite it");
    outcome.skipped = true;
    outcome.records = al::read_rounds_csv(dir / "rounds.csv");
    if (fs::exists(dir / "selections.json"))
      restore_selections(outcome.records, json::parse(read_text(dir / "selections.json")));
    if (log) *log << "already done: " << dir.string() << " (" << outcome.hash.substr(0, 12) << ")\n";
    return outcome;
  }
  if (fs::exists(dir / "manifest.json") && !flags.force) {
    const auto manifest = json::parse(read_text(dir / "manifest.json"));
    const auto previous = manifest.value("hash", std::string{});
    if (previous != outcome.hash)
      throw ResumeConflict(dir.string() + " holds an unfinished run with config hash " + previous +
                           "; pass --force to start over");
  }
  if (flags.force) {
    fs::remove(dir / "DONE");
    fs::remove_all(dir / "arms");
    fs::remove_all(dir / "artifacts");
  }
  fs::create_directories(dir / "arms");

  auto ds = obtain_dataset(config);
  task::TaskSpec spec = config.task;
  spec.image_size = ds.spec.image_size;

  json manifest;
  manifest["hash"] = outcome.hash;
  manifest["config"] = to_json(config);
  manifest["dataset_hash"] = ds.content_hash;
  manifest["mode"] = flags.ablate_gamma3 ? "ablate-gamma3" : "run";
  manifest["metric"] = metric_name(spec.kind);
  manifest["arms"] = json::array();
  for (const auto& a : arms) manifest["arms"].push_back(a.tag);
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");

  std::unique_ptr<al::Oracle> oracle;
  std::shared_ptr<al::TaskQueue> queue = flags.queue;
  if (config.oracle.kind == "remote") {
    if (!queue) queue = std::make_shared<al::TaskQueue>(dir / "queue.json");
    oracle = std::make_unique<al::RemoteOracle>(
        queue, std::chrono::milliseconds(static_cast<std::int64_t>(config.oracle.timeout_s * 1000)),
        std::chrono::milliseconds(static_cast<std::int64_t>(config.oracle.poll_s * 1000)));
  } else {
    oracle = std::make_unique<al::SimulatedOracle>(ds);
  }

  al::TaskCache cache;
  std::mutex log_mu;
  const auto metric = metric_name(spec.kind);
  for (const auto& arm_in : arms) {
    al::Arm arm = arm_in;
    arm.config.image_size = spec.image_size;
    std::vector<al::RoundRecord> records;
    if (fs::exists(arm_csv(dir, arm.tag))) {
      records = al::read_rounds_csv(arm_csv(dir, arm.tag));
      if (fs::exists(arm_selected(dir, arm.tag)))
        restore_selections(records, json::parse(read_text(arm_selected(dir, arm.tag))));
      if (log) *log << "[" << arm.tag << "] resumed from checkpoint\n";
    } else {
      al::RunOptions opt;
      opt.jobs = config.jobs;
      opt.fresh_sampler_each_round = config.fresh_sampler_each_round;
      opt.cache = &cache;
      opt.artifacts = dir / "artifacts";
      opt.status = queue;
      opt.on_round = [&](const al::RoundRecord& r) {
        if (!log) return;
        std::lock_guard lock(log_mu);
        *log << "[" << r.sampler << "] seed " << r.seed << " round " << r.round << " budget " << r.budget << ' '
             << metric << ' ' << std::fixed << std::setprecision(4) << r.metric << " (" << std::setprecision(1)
             << r.wall_time << "s)" << std::defaultfloat << std::endl;
      };
      records = al::run_active_learning(ds, spec, arm, config.schedule, *oracle, config.seeds, opt);
      write_text(arm_selected(dir, arm.tag), selections_json(records).dump() + "\n");
      al::write_rounds_csv(arm_csv(dir, arm.tag), records);
    }
    outcome.records.insert(outcome.records.end(), records.begin(), records.end());
  }

  al::write_rounds_csv(dir / "rounds.csv", outcome.records);
  write_text(dir / "selections.json", selections_json(outcome.records).dump() + "\n");
  emit_reports(dir);
  write_text(dir / "DONE", outcome.hash + "\n");
  if (log) *log << "done: " << dir.string() << " (" << outcome.hash.substr(0, 12) << ")\n";
  return outcome;
}

}  // namespace mvaal::harness
