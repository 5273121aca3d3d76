#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvaal/sampler/sampler.hpp"
#include "mvaal/synth/synth.hpp"
#include "mvaal/task/task.hpp"

namespace mvaal::al {

class Error : public ad::Error {
 public:
  using ad::Error::Error;
};

class PoolError : public Error {
 public:
  using Error::Error;
};

class ScheduleError : public Error {
 public:
  using Error::Error;
};

enum class SamplerKind { kRandom, kVaal, kMvaal };

std::string to_string(SamplerKind kind);
SamplerKind sampler_kind_from_string(const std::string& s);

// Labeled/unlabeled partition of the universe [0, n). Both sides are kept
// sorted; pool positions map to dataset ids through the training split.
class Pool {
 public:
  explicit Pool(std::int64_t n);
  Pool(std::int64_t n, std::vector<std::int64_t> labeled);

  std::int64_t size() const { return n_; }
  const std::vector<std::int64_t>& labeled() const { return labeled_; }
  const std::vector<std::int64_t>& unlabeled() const { return unlabeled_; }
  bool is_labeled(std::int64_t i) const;

  // Throws PoolError if disjointness, conservation, order or range fails.
  void check() const;

 private:
  friend Pool update_pools(const Pool& pool, std::span<const std::int64_t> selected);
  std::int64_t n_ = 0;
  std::vector<std::int64_t> labeled_;
  std::vector<std::int64_t> unlabeled_;
};

// Moves `selected` (unlabeled, duplicate-free) into the labeled side.
Pool update_pools(const Pool& pool, std::span<const std::int64_t> selected);

struct Schedule {
  std::int64_t initial = 100;
  std::int64_t b = 50;
  std::int64_t rounds = 5;
};

void validate(const Schedule& s, std::int64_t pool_size);

// Uniform draw of b pool positions without replacement, sorted.
std::vector<std::int64_t> random_acquire(const Pool& pool, std::int64_t b, std::uint64_t seed);
std::vector<std::int64_t> initial_labeled(std::int64_t n, std::int64_t initial, std::uint64_t seed);

// random: seeded uniform draw; vaal/mvaal: bottom-b discriminator scores over
// the unlabeled pool. Returns pool positions.
std::vector<std::int64_t> acquire(SamplerKind kind, const Pool& pool, const synth::Dataset& ds,
                                  sampler::SamplerState* state, std::int64_t b, std::uint64_t seed);

// Oracle side ---------------------------------------------------------------

using LabelMap = std::map<std::int64_t, std::vector<std::int64_t>>;  // dataset id -> labels

// Run tag of round-0 requests, which every arm shares.
inline constexpr const char* kInitialRun = "initial";

struct AnnotationRequest {
  std::string run;  // arm tag, e.g. "mvaal" or "mvaal-g0.4", or kInitialRun
  std::uint64_t seed = 0;
  std::int64_t round = 0;
  task::TaskKind kind = task::TaskKind::kMulticlass;
  std::int64_t num_classes = 0;
  std::vector<std::int64_t> ids;  // dataset ids
};

class OracleTimeout : public Error {
 public:
  OracleTimeout(const std::string& what, LabelMap partial) : Error(what), partial(std::move(partial)) {}
  LabelMap partial;
};

class Oracle {
 public:
  virtual ~Oracle() = default;
  virtual LabelMap annotate(const AnnotationRequest& request) = 0;
};

// Ground-truth lookup: the primary class for multiclass, the label set for
// multilabel, nothing for segmentation (masks are read from the dataset).
class SimulatedOracle : public Oracle {
 public:
  explicit SimulatedOracle(const synth::Dataset& ds) : ds_(ds) {}
  LabelMap annotate(const AnnotationRequest& request) override;

 private:
  const synth::Dataset& ds_;
};

enum class TaskStatus { kPending, kSubmitted };

struct AnnotationTask {
  std::int64_t task_id = 0;
  std::int64_t sample_id = 0;
  std::string run;
  std::uint64_t seed = 0;
  std::int64_t round = 0;
  task::TaskKind kind = task::TaskKind::kMulticlass;
  std::vector<std::int64_t> choices;
  TaskStatus status = TaskStatus::kPending;
  std::vector<std::int64_t> label;
  std::string note;
};

struct RoundStatus {
  std::string run;
  std::uint64_t seed = 0;
  std::int64_t round = 0;
  std::string state;  // "training", "awaiting_labels", "done"
  std::int64_t budget = 0;
  std::optional<double> metric;
};

enum class SubmitOutcome { kAccepted, kUnchanged, kInvalid, kUnknown, kConflict };

struct SubmitResult {
  SubmitOutcome outcome;
  std::string detail;
  std::optional<AnnotationTask> task;
};

// Annotation tasks and round status persisted as one JSON document. Every
// operation re-reads the file under an exclusive lock, so the experiment
// loop and the HTTP service may live in different processes.
class TaskQueue {
 public:
  explicit TaskQueue(std::filesystem::path path);

  const std::filesystem::path& path() const { return path_; }

  // Returns one task per requested id, reusing tasks that already exist for
  // the same (run, seed, round, sample) so interrupted runs resume.
  std::vector<AnnotationTask> enqueue(const AnnotationRequest& request);
  SubmitResult submit(std::int64_t task_id, const std::vector<std::int64_t>& label,
                      const std::string& note = {});
  std::vector<AnnotationTask> tasks(std::optional<TaskStatus> status = std::nullopt) const;
  std::optional<AnnotationTask> find(std::int64_t task_id) const;

  void set_round(const RoundStatus& status);
  std::vector<RoundStatus> rounds() const;

 private:
  struct Doc;
  template <class F>
  auto with_doc(bool write, F&& f) const;
  std::filesystem::path path_;
  mutable std::mutex mu_;
};

// Checks a label against the task kind and choices; returns an error detail
// or nothing.
std::optional<std::string> validate_label(task::TaskKind kind, std::span<const std::int64_t> choices,
                                          std::span<const std::int64_t> label);

std::string to_string(TaskStatus s);
TaskStatus task_status_from_string(const std::string& s);

nlohmann::json to_json(const AnnotationTask& t);
nlohmann::json to_json(const RoundStatus& r);

// Posts the request to the queue and polls until every task is submitted.
class RemoteOracle : public Oracle {
 public:
  RemoteOracle(std::shared_ptr<TaskQueue> queue, std::chrono::milliseconds timeout,
               std::chrono::milliseconds poll = std::chrono::milliseconds(1000));
  LabelMap annotate(const AnnotationRequest& request) override;

 private:
  std::shared_ptr<TaskQueue> queue_;
  std::chrono::milliseconds timeout_;
  std::chrono::milliseconds poll_;
};

// Experiment loop -------------------------------------------------------------

struct RoundRecord {
  std::int64_t round = 0;
  std::int64_t budget = 0;  // labeled count after acquisition
  std::string sampler;      // arm tag
  std::uint64_t seed = 0;
  double metric = 0.0;
  double wall_time = 0.0;           // seconds spent on this round
  std::vector<std::int64_t> selected;  // dataset ids acquired this round
  bool short_budget = false;        // fewer than b left in the pool
};

struct RoundReport {
  std::int64_t round = 0;
  std::int64_t budget = 0;
  std::string sampler;
  std::int64_t n_seeds = 0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single seed
};

// Memoizes task results by (seed, round-independent labeled set) so arms
// that share a round-0 set train it once.
class TaskCache {
 public:
  std::optional<double> get(const std::string& key) const;
  void put(const std::string& key, double metric);

 private:
  mutable std::mutex mu_;
  std::map<std::string, double> values_;
};

struct Arm {
  std::string tag;  // used as the sampler column
  SamplerKind kind = SamplerKind::kRandom;
  sampler::SamplerConfig config;  // ignored for random
};

struct RunOptions {
  std::int64_t jobs = 1;  // seeds trained concurrently
  bool fresh_sampler_each_round = true;
  TaskCache* cache = nullptr;
  std::filesystem::path artifacts;  // per-round logs when nonempty
  std::function<void(const RoundRecord&)> on_round;
  std::shared_ptr<TaskQueue> status;  // round progress sink (remote mode)
};

std::vector<RoundRecord> run_active_learning(const synth::Dataset& ds, const task::TaskSpec& spec,
                                             const Arm& arm, const Schedule& schedule, Oracle& oracle,
                                             std::span<const std::uint64_t> seeds,
                                             const RunOptions& options = {});

// Mean and std per (sampler, round), ordered by sampler then round.
std::vector<RoundReport> aggregate(std::span<const RoundRecord> records);

void write_rounds_csv(const std::filesystem::path& path, std::span<const RoundRecord> records);
std::vector<RoundRecord> read_rounds_csv(const std::filesystem::path& path);
void write_aggregate_csv(const std::filesystem::path& path, std::span<const RoundReport> rows);

}  // namespace mvaal::al
