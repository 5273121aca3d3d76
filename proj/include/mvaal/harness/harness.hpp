#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvaal/al/al.hpp"

namespace mvaal::harness {

class ConfigError : public al::Error {
 public:
  using al::Error::Error;
};

class ResumeConflict : public al::Error {
 public:
  using al::Error::Error;
};

struct OracleConfig {
  std::string kind = "simulated";  // or "remote"
  double timeout_s = 3600.0;
  double poll_s = 1.0;
};

struct ExperimentConfig {
  std::optional<std::filesystem::path> dataset_path;  // load instead of generating
  synth::SynthSpec dataset;
  task::TaskSpec task;
  std::vector<std::string> samplers{"random", "vaal", "mvaal"};
  sampler::SamplerConfig sampler;  // mode and gamma3 are set per arm
  al::Schedule schedule;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::filesystem::path output = "runs/default";
  OracleConfig oracle;
  std::optional<std::vector<double>> gamma3_sweep;
  std::int64_t jobs = 1;
  bool fresh_sampler_each_round = true;
};

// Desk-scale defaults as a JSON document (every accepted key appears).
nlohmann::json default_config_json();
nlohmann::json to_json(const ExperimentConfig& c);
// Strict: unknown keys and wrong types raise ConfigError naming the key.
// The schedule is checked against the generated pool unless told otherwise.
ExperimentConfig config_from_json(const nlohmann::json& j, bool check_schedule = true);

// Applies "a.b.c=value" overrides; the value is parsed as JSON when it can
// be, otherwise taken as a string.
void apply_override(nlohmann::json& j, const std::string& assignment);

ExperimentConfig load_config(const std::optional<std::filesystem::path>& file,
                             const std::vector<std::string>& overrides, bool check_schedule = true);

// Hash of everything that determines results (output and jobs excluded).
std::string config_hash(const ExperimentConfig& c);

std::vector<al::Arm> comparison_arms(const ExperimentConfig& c);
std::vector<al::Arm> gamma3_arms(const ExperimentConfig& c);
inline const std::vector<double> kDefaultGamma3Sweep{0.2, 0.4, 0.8, 1.0};

synth::Dataset obtain_dataset(const ExperimentConfig& c);

struct RunFlags {
  bool force = false;
  bool ablate_gamma3 = false;
  std::shared_ptr<al::TaskQueue> queue;  // remote mode; created under output when null
};

struct RunOutcome {
  bool skipped = false;  // DONE with the same hash
  std::filesystem::path dir;
  std::string hash;
  std::vector<al::RoundRecord> records;
};

// Runs every arm over the shared schedule and seeds, writes CSVs, reports
// and the DONE marker. Log lines go to `log` when given.
RunOutcome run_experiment(const ExperimentConfig& c, const RunFlags& flags, std::ostream* log = nullptr);

std::string metric_name(task::TaskKind kind);

// Aggregate table (CSV + markdown), learning-curve SVG and the CSV schema.
void emit_reports(const std::filesystem::path& run_dir);

// SVG line plot with a +-std band per series.
struct CurveSeries {
  std::string name;
  std::vector<double> x, mean, std;
};
std::string learning_curve_svg(const std::vector<CurveSeries>& series, const std::string& x_label,
                               const std::string& y_label);

// HTTP oracle API over a persisted task queue.
class ApiServer {
 public:
  ApiServer(std::shared_ptr<al::TaskQueue> queue, std::shared_ptr<const synth::Dataset> dataset,
            std::filesystem::path static_dir = {});
  ~ApiServer();
  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  // Binds and serves on a background thread; returns the bound port.
  int start(const std::string& host, int port);
  void stop();
  // Set by the experiment thread; reported by /api/progress.
  void set_finished(bool done, std::string error = {});

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Entry point behind the mvaal executable.
int run_cli(int argc, char** argv);

}  // namespace mvaal::harness
