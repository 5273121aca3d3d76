#include "mvaal/al/al.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "mvaal/util/hash.hpp"
#include "mvaal/util/random.hpp"

namespace mvaal::al {

using nlohmann::json;

namespace {

// derive_seed tags for the per-seed streams
enum : std::uint64_t { kInitTag = 0x1a17, kRandomTag, kSamplerTag, kTaskTag };

void check_sorted_unique(const std::vector<std::int64_t>& v, std::int64_t n, const char* what) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] < 0 || v[i] >= n)
      throw PoolError(std::string(what) + " index " + std::to_string(v[i]) + " outside [0, " +
                      std::to_string(n) + ")");
    if (i > 0 && v[i] <= v[i - 1]) throw PoolError(std::string(what) + " set is not strictly sorted");
  }
}

std::vector<std::int64_t> draw(std::vector<std::int64_t> from, std::int64_t k, std::uint64_t seed) {
  Rng rng(seed);
  const auto n = static_cast<std::uint64_t>(from.size());
  for (std::uint64_t i = 0; i < static_cast<std::uint64_t>(k); ++i)
    std::swap(from[i], from[i + rng.below(n - i)]);
  from.resize(static_cast<std::size_t>(k));
  std::sort(from.begin(), from.end());
  return from;
}

}  // namespace

std::string to_string(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::kRandom: return "random";
    case SamplerKind::kVaal: return "vaal";
    case SamplerKind::kMvaal: return "mvaal";
  }
  return "?";
}

SamplerKind sampler_kind_from_string(const std::string& s) {
  if (s == "random") return SamplerKind::kRandom;
  if (s == "vaal") return SamplerKind::kVaal;
  if (s == "mvaal") return SamplerKind::kMvaal;
  throw Error("unknown sampler kind '" + s + "' (expected random, vaal or mvaal)");
}

// Pool ------------------------------------------------------------------------

Pool::Pool(std::int64_t n) : n_(n) {
  if (n < 0) throw PoolError("pool size must be >= 0");
  unlabeled_.resize(static_cast<std::size_t>(n));
  std::iota(unlabeled_.begin(), unlabeled_.end(), std::int64_t{0});
}

Pool::Pool(std::int64_t n, std::vector<std::int64_t> labeled) : Pool(n) {
  std::sort(labeled.begin(), labeled.end());
  check_sorted_unique(labeled, n, "labeled");
  std::vector<std::int64_t> rest;
  std::set_difference(unlabeled_.begin(), unlabeled_.end(), labeled.begin(), labeled.end(),
                      std::back_inserter(rest));
  unlabeled_ = std::move(rest);
  labeled_ = std::move(labeled);
}

bool Pool::is_labeled(std::int64_t i) const {
  return std::binary_search(labeled_.begin(), labeled_.end(), i);
}

void Pool::check() const {
  check_sorted_unique(labeled_, n_, "labeled");
  check_sorted_unique(unlabeled_, n_, "unlabeled");
  if (static_cast<std::int64_t>(labeled_.size() + unlabeled_.size()) != n_)
    throw PoolError("labeled and unlabeled sizes do not add up to the universe");
  std::vector<std::int64_t> both;
  std::set_intersection(labeled_.begin(), labeled_.end(), unlabeled_.begin(), unlabeled_.end(),
                        std::back_inserter(both));
  if (!both.empty()) throw PoolError("index " + std::to_string(both.front()) + " is on both sides");
}

Pool update_pools(const Pool& pool, std::span<const std::int64_t> selected) {
  std::vector<std::int64_t> sel(selected.begin(), selected.end());
  std::sort(sel.begin(), sel.end());
  if (std::adjacent_find(sel.begin(), sel.end()) != sel.end())
    throw PoolError("selection contains a duplicate index");
  for (auto i : sel) {
    if (i < 0 || i >= pool.n_) throw PoolError("selected index " + std::to_string(i) + " out of range");
    if (pool.is_labeled(i)) throw PoolError("selected index " + std::to_string(i) + " is already labeled");
  }
  Pool out(0);
  out.n_ = pool.n_;
  std::set_union(pool.labeled_.begin(), pool.labeled_.end(), sel.begin(), sel.end(),
                 std::back_inserter(out.labeled_));
  std::set_difference(pool.unlabeled_.begin(), pool.unlabeled_.end(), sel.begin(), sel.end(),
                      std::back_inserter(out.unlabeled_));
  return out;
}

void validate(const Schedule& s, std::int64_t pool_size) {
  if (s.initial < 1 || s.b < 1 || s.rounds < 0)
    throw ScheduleError("schedule needs initial >= 1, b >= 1, rounds >= 0");
  if (s.initial + s.rounds * s.b > pool_size)
    throw ScheduleError("schedule overflow: " + std::to_string(s.initial) + " + " +
                        std::to_string(s.rounds) + " x " + std::to_string(s.b) + " exceeds pool of " +
                        std::to_string(pool_size));
}

std::vector<std::int64_t> random_acquire(const Pool& pool, std::int64_t b, std::uint64_t seed) {
  if (b < 0 || b > static_cast<std::int64_t>(pool.unlabeled().size()))
    throw PoolError("budget " + std::to_string(b) + " exceeds unlabeled pool of " +
                    std::to_string(pool.unlabeled().size()));
  return draw(pool.unlabeled(), b, seed);
}

std::vector<std::int64_t> initial_labeled(std::int64_t n, std::int64_t initial, std::uint64_t seed) {
  return random_acquire(Pool(n), initial, seed);
}

std::vector<std::int64_t> acquire(SamplerKind kind, const Pool& pool, const synth::Dataset& ds,
                                  sampler::SamplerState* state, std::int64_t b, std::uint64_t seed) {
  if (kind == SamplerKind::kRandom) return random_acquire(pool, b, seed);
  if (!state) throw Error(to_string(kind) + " acquisition needs a trained sampler state");
  const auto& pos = pool.unlabeled();
  std::vector<std::int64_t> ids;
  ids.reserve(pos.size());
  for (auto p : pos) ids.push_back(ds.splits.train.at(static_cast<std::size_t>(p)));
  const ad::Tensor m1 = synth::stack(ds, ids, synth::Modality::kM1);
  return sampler::select_for_annotation(*state, m1, pos, b);
}

// Oracles ---------------------------------------------------------------------

LabelMap SimulatedOracle::annotate(const AnnotationRequest& req) {
  LabelMap out;
  for (auto id : req.ids) {
    const auto& s = ds_.samples.at(static_cast<std::size_t>(id));
    switch (req.kind) {
      case task::TaskKind::kMulticlass: out[id] = {s.primary}; break;
      case task::TaskKind::kMultilabel: out[id] = s.labels; break;
      case task::TaskKind::kSegmentation: out[id] = {}; break;
    }
  }
  return out;
}

std::string to_string(TaskStatus s) { return s == TaskStatus::kPending ? "pending" : "submitted"; }

TaskStatus task_status_from_string(const std::string& s) {
  if (s == "pending") return TaskStatus::kPending;
  if (s == "submitted") return TaskStatus::kSubmitted;
  throw Error("unknown task status '" + s + "'");
}

std::optional<std::string> validate_label(task::TaskKind kind, std::span<const std::int64_t> choices,
                                          std::span<const std::int64_t> label) {
  auto allowed = [&](std::int64_t v) { return std::find(choices.begin(), choices.end(), v) != choices.end(); };
  switch (kind) {
    case task::TaskKind::kSegmentation:
      return "segmentation rounds are annotated by the simulated oracle only";
    case task::TaskKind::kMulticlass:
      if (label.size() != 1) return "multiclass tasks take exactly one class";
      if (!allowed(label[0])) return "class " + std::to_string(label[0]) + " is not among the choices";
      return std::nullopt;
    case task::TaskKind::kMultilabel: {
      std::vector<std::int64_t> v(label.begin(), label.end());
      std::sort(v.begin(), v.end());
      if (std::adjacent_find(v.begin(), v.end()) != v.end()) return "duplicate class in label set";
      for (auto c : v)
        if (!allowed(c)) return "class " + std::to_string(c) + " is not among the choices";
      return std::nullopt;
    }
  }
  return "unknown task kind";
}

json to_json(const AnnotationTask& t) {
  json j = {{"task_id", t.task_id},   {"sample_id", t.sample_id},
            {"run", t.run},           {"seed", t.seed},
            {"round", t.round},       {"kind", task::to_string(t.kind)},
            {"choices", t.choices},   {"status", to_string(t.status)},
            {"note", t.note},         {"image", "/api/sample/" + std::to_string(t.sample_id) + ".png"},
            {"aux_image", "/api/sample/" + std::to_string(t.sample_id) + "/aux.png"}};
  if (t.status == TaskStatus::kSubmitted) {
    if (t.kind == task::TaskKind::kMulticlass && t.label.size() == 1) j["label"] = t.label[0];
    else j["label"] = t.label;
  } else {
    j["label"] = nullptr;
  }
  return j;
}

json to_json(const RoundStatus& r) {
  json j = {{"run", r.run}, {"seed", r.seed}, {"round", r.round}, {"state", r.state}, {"budget", r.budget}};
  j["metric"] = r.metric ? json(*r.metric) : json(nullptr);
  return j;
}

namespace {

AnnotationTask task_from_json(const json& j) {
  AnnotationTask t;
  t.task_id = j.at("task_id").get<std::int64_t>();
  t.sample_id = j.at("sample_id").get<std::int64_t>();
  t.run = j.at("run").get<std::string>();
  t.seed = j.at("seed").get<std::uint64_t>();
  t.round = j.at("round").get<std::int64_t>();
  t.kind = task::task_kind_from_string(j.at("kind").get<std::string>());
  t.choices = j.at("choices").get<std::vector<std::int64_t>>();
  t.status = task_status_from_string(j.at("status").get<std::string>());
  const auto& l = j.at("label");
  if (l.is_number_integer()) t.label = {l.get<std::int64_t>()};
  else if (l.is_array()) t.label = l.get<std::vector<std::int64_t>>();
  t.note = j.value("note", "");
  return t;
}

RoundStatus round_from_json(const json& j) {
  RoundStatus r;
  r.run = j.at("run").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.round = j.at("round").get<std::int64_t>();
  r.state = j.at("state").get<std::string>();
  r.budget = j.at("budget").get<std::int64_t>();
  if (!j.at("metric").is_null()) r.metric = j.at("metric").get<double>();
  return r;
}

// flock on a sidecar file; released on destruction
class FileLock {
 public:
  FileLock(const std::filesystem::path& p, bool exclusive) {
    fd_ = ::open(p.c_str(), O_RDWR | O_CREAT, 0644);
    if (fd_ < 0) throw Error("cannot open lock file " + p.string());
    if (::flock(fd_, exclusive ? LOCK_EX : LOCK_SH) != 0) {
      ::close(fd_);
      throw Error("cannot lock " + p.string());
    }
  }
  ~FileLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

 private:
  int fd_ = -1;
};

}  // namespace

struct TaskQueue::Doc {
  std::int64_t next_id = 1;
  std::vector<AnnotationTask> tasks;
  std::vector<RoundStatus> rounds;
};

TaskQueue::TaskQueue(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
}

template <class F>
auto TaskQueue::with_doc(bool write, F&& f) const {
  std::lock_guard<std::mutex> guard(mu_);
  FileLock lock(path_.string() + ".lock", write);
  Doc doc;
  if (std::filesystem::exists(path_)) {
    std::ifstream in(path_);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw Error("task queue " + path_.string() + " is corrupt: " + e.what());
    }
    doc.next_id = j.at("next_id").get<std::int64_t>();
    for (const auto& t : j.at("tasks")) doc.tasks.push_back(task_from_json(t));
    for (const auto& r : j.at("rounds")) doc.rounds.push_back(round_from_json(r));
  }
  auto save = [&] {
    json j = {{"next_id", doc.next_id}, {"tasks", json::array()}, {"rounds", json::array()}};
    for (const auto& t : doc.tasks) {
      json tj = to_json(t);
      tj.erase("image");
      tj.erase("aux_image");
      j["tasks"].push_back(std::move(tj));
    }
    for (const auto& r : doc.rounds) j["rounds"].push_back(to_json(r));
    const auto tmp = path_.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      out << j.dump(1) << '\n';
      if (!out) throw Error("cannot write " + tmp);
    }
    std::filesystem::rename(tmp, path_);
  };
  if constexpr (std::is_void_v<decltype(f(doc))>) {
    f(doc);
    if (write) save();
  } else {
    auto result = f(doc);
    if (write) save();
    return result;
  }
}

std::vector<AnnotationTask> TaskQueue::enqueue(const AnnotationRequest& req) {
  return with_doc(true, [&](Doc& doc) {
    std::vector<AnnotationTask> out;
    std::vector<std::int64_t> choices(static_cast<std::size_t>(req.num_classes));
    std::iota(choices.begin(), choices.end(), std::int64_t{0});
    for (auto id : req.ids) {
      auto it = std::find_if(doc.tasks.begin(), doc.tasks.end(), [&](const AnnotationTask& t) {
        return t.run == req.run && t.seed == req.seed && t.round == req.round && t.sample_id == id;
      });
      if (it != doc.tasks.end()) {
        out.push_back(*it);
        continue;
      }
      AnnotationTask t;
      t.task_id = doc.next_id++;
      t.sample_id = id;
      t.run = req.run;
      t.seed = req.seed;
      t.round = req.round;
      t.kind = req.kind;
      t.choices = choices;
      doc.tasks.push_back(t);
      out.push_back(t);
    }
    return out;
  });
}

SubmitResult TaskQueue::submit(std::int64_t task_id, const std::vector<std::int64_t>& label,
                               const std::string& note) {
  return with_doc(true, [&](Doc& doc) -> SubmitResult {
    auto it = std::find_if(doc.tasks.begin(), doc.tasks.end(),
                           [&](const AnnotationTask& t) { return t.task_id == task_id; });
    if (it == doc.tasks.end())
      return {SubmitOutcome::kUnknown, "no task with id " + std::to_string(task_id), std::nullopt};
    if (auto err = validate_label(it->kind, it->choices, label))
      return {SubmitOutcome::kInvalid, *err, *it};
    std::vector<std::int64_t> norm = label;
    std::sort(norm.begin(), norm.end());
    if (it->status == TaskStatus::kSubmitted) {
      if (it->label == norm) return {SubmitOutcome::kUnchanged, "already submitted with this label", *it};
      return {SubmitOutcome::kConflict, "task already carries a different label", *it};
    }
    it->status = TaskStatus::kSubmitted;
    it->label = std::move(norm);
    it->note = note;
    return {SubmitOutcome::kAccepted, "", *it};
  });
}

std::vector<AnnotationTask> TaskQueue::tasks(std::optional<TaskStatus> status) const {
  return with_doc(false, [&](Doc& doc) {
    std::vector<AnnotationTask> out;
    for (const auto& t : doc.tasks)
      if (!status || t.status == *status) out.push_back(t);
    return out;
  });
}

std::optional<AnnotationTask> TaskQueue::find(std::int64_t task_id) const {
  return with_doc(false, [&](Doc& doc) -> std::optional<AnnotationTask> {
    for (const auto& t : doc.tasks)
      if (t.task_id == task_id) return t;
    return std::nullopt;
  });
}

void TaskQueue::set_round(const RoundStatus& status) {
  with_doc(true, [&](Doc& doc) {
    auto it = std::find_if(doc.rounds.begin(), doc.rounds.end(), [&](const RoundStatus& r) {
      return r.run == status.run && r.seed == status.seed && r.round == status.round;
    });
    if (it == doc.rounds.end()) doc.rounds.push_back(status);
    else *it = status;
  });
}

std::vector<RoundStatus> TaskQueue::rounds() const {
  return with_doc(false, [&](Doc& doc) { return doc.rounds; });
}

RemoteOracle::RemoteOracle(std::shared_ptr<TaskQueue> queue, std::chrono::milliseconds timeout,
                           std::chrono::milliseconds poll)
    : queue_(std::move(queue)), timeout_(timeout), poll_(poll) {
  if (!queue_) throw Error("remote oracle needs a task queue");
}

LabelMap RemoteOracle::annotate(const AnnotationRequest& req) {
  if (req.kind == task::TaskKind::kSegmentation)
    throw Error("segmentation rounds are annotated by the simulated oracle only");
  std::vector<std::int64_t> ids;
  for (const auto& t : queue_->enqueue(req)) ids.push_back(t.task_id);
  const auto start = std::chrono::steady_clock::now();
  for (;;) {
    LabelMap got;
    for (const auto& t : queue_->tasks(TaskStatus::kSubmitted))
      if (std::find(ids.begin(), ids.end(), t.task_id) != ids.end()) got[t.sample_id] = t.label;
    if (got.size() == ids.size()) return got;
    if (std::chrono::steady_clock::now() - start >= timeout_)
      throw OracleTimeout("oracle timed out with " + std::to_string(got.size()) + " of " +
                              std::to_string(ids.size()) + " labels for " + req.run + " seed " +
                              std::to_string(req.seed) + " round " + std::to_string(req.round),
                          std::move(got));
    std::this_thread::sleep_for(std::min(poll_, std::chrono::duration_cast<std::chrono::milliseconds>(
                                                    timeout_ - (std::chrono::steady_clock::now() - start))));
  }
}

// Experiment loop ---------------------------------------------------------------

std::optional<double> TaskCache::get(const std::string& key) const {
  std::lock_guard<std::mutex> g(mu_);
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

void TaskCache::put(const std::string& key, double metric) {
  std::lock_guard<std::mutex> g(mu_);
  values_[key] = metric;
}

namespace {

struct Shared {
  const synth::Dataset& ds;
  const task::TaskSpec& spec;
  const Arm& arm;
  const Schedule& schedule;
  Oracle& oracle;
  const RunOptions& opt;
  task::TaskData val;
  task::TaskData test;
  std::mutex cb_mu;
};

std::vector<std::int64_t> to_ids(const synth::Dataset& ds, std::span<const std::int64_t> positions) {
  std::vector<std::int64_t> ids;
  ids.reserve(positions.size());
  for (auto p : positions) ids.push_back(ds.splits.train.at(static_cast<std::size_t>(p)));
  return ids;
}

std::string cache_key(std::uint64_t task_seed, std::span<const std::int64_t> ids, const LabelMap& labels) {
  std::ostringstream s;
  s << task_seed << '|';
  for (auto id : ids) {
    s << id << ':';
    for (auto l : labels.at(id)) s << l << ',';
    s << ';';
  }
  return blob_hash(s.str());
}

void report_status(Shared& sh, std::uint64_t seed, std::int64_t round, const std::string& state,
                   std::int64_t budget, std::optional<double> metric = std::nullopt) {
  if (sh.opt.status) sh.opt.status->set_round({sh.arm.tag, seed, round, state, budget, metric});
}

std::vector<RoundRecord> run_seed(Shared& sh, std::uint64_t seed) {
  const auto& ds = sh.ds;
  const std::int64_t n = static_cast<std::int64_t>(ds.splits.train.size());
  const auto& sch = sh.schedule;
  const bool uses_sampler = sh.arm.kind != SamplerKind::kRandom;
  std::filesystem::path art;
  if (!sh.opt.artifacts.empty()) {
    art = sh.opt.artifacts / sh.arm.tag / ("seed" + std::to_string(seed));
    std::filesystem::create_directories(art);
  }

  LabelMap labels;
  auto annotate = [&](std::int64_t round, const std::vector<std::int64_t>& ids) {
    // the initial set is the same for every arm, so its tasks are shared
    AnnotationRequest req{round == 0 ? std::string(kInitialRun) : sh.arm.tag, seed, round, sh.spec.kind,
                          sh.spec.num_classes, ids};
    // both oracles are safe to share between seed threads
    const LabelMap got = sh.oracle.annotate(req);
    for (auto id : ids) {
      auto it = got.find(id);
      if (it == got.end()) throw Error("oracle returned no label for sample " + std::to_string(id));
      labels[id] = it->second;
    }
  };
  const task::LabelLookup lookup = [&](std::int64_t id) { return labels.at(id); };

  auto train_eval = [&](std::int64_t round, const Pool& pool) {
    const auto ids = to_ids(ds, pool.labeled());
    const std::uint64_t task_seed = derive_seed(seed, {kTaskTag, static_cast<std::uint64_t>(round)});
    const std::string key = cache_key(task_seed, ids, labels);
    if (sh.opt.cache)
      if (auto hit = sh.opt.cache->get(key)) return *hit;
    const auto data = task::make_task_data(ds, ids, sh.spec, lookup);
    auto model = task::train_task(sh.spec, data, sh.val, task_seed);
    const double metric = task::evaluate(sh.spec, model.params, sh.test);
    if (!art.empty()) task::write_training_log(art / ("round" + std::to_string(round) + "_task.csv"), model.log);
    if (sh.opt.cache) sh.opt.cache->put(key, metric);
    return metric;
  };

  std::vector<RoundRecord> out;
  auto emit = [&](RoundRecord r) {
    report_status(sh, seed, r.round, "done", r.budget, r.metric);
    if (sh.opt.on_round) {
      std::lock_guard<std::mutex> g(sh.cb_mu);
      sh.opt.on_round(r);
    }
    out.push_back(std::move(r));
  };

  auto t0 = std::chrono::steady_clock::now();
  Pool pool(n, initial_labeled(n, sch.initial, derive_seed(seed, {kInitTag})));
  report_status(sh, seed, 0, "awaiting_labels", sch.initial);
  annotate(0, to_ids(ds, pool.labeled()));
  report_status(sh, seed, 0, "training", sch.initial);
  {
    RoundRecord r;
    r.round = 0;
    r.budget = static_cast<std::int64_t>(pool.labeled().size());
    r.sampler = sh.arm.tag;
    r.seed = seed;
    r.metric = train_eval(0, pool);
    r.selected = to_ids(ds, pool.labeled());
    r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    emit(std::move(r));
  }

  std::optional<sampler::SamplerState> state;
  for (std::int64_t round = 1; round <= sch.rounds; ++round) {
    t0 = std::chrono::steady_clock::now();
    const auto uround = static_cast<std::uint64_t>(round);
    const std::int64_t b = std::min<std::int64_t>(sch.b, static_cast<std::int64_t>(pool.unlabeled().size()));
    report_status(sh, seed, round, "training", static_cast<std::int64_t>(pool.labeled().size()) + b);
    if (uses_sampler) {
      if (!state || sh.opt.fresh_sampler_each_round)
        state = sampler::init_sampler(sh.arm.config, derive_seed(seed, {kSamplerTag, uround}));
      const auto lab = to_ids(ds, pool.labeled());
      const auto unl = to_ids(ds, pool.unlabeled());
      sampler::SamplerData data;
      data.labeled_m1 = synth::stack(ds, lab, synth::Modality::kM1);
      data.unlabeled_m1 = synth::stack(ds, unl, synth::Modality::kM1);
      if (sh.arm.config.mode == sampler::SamplerMode::kMvaal) {
        data.labeled_m2 = synth::stack(ds, lab, synth::Modality::kM2);
        data.unlabeled_m2 = synth::stack(ds, unl, synth::Modality::kM2);
      }
      sampler::train_sampler(*state, data,
                             art.empty() ? std::filesystem::path{}
                                         : art / ("round" + std::to_string(round) + "_sampler.csv"));
    }
    const auto picked = acquire(sh.arm.kind, pool, ds, state ? &*state : nullptr, b,
                                derive_seed(seed, {kRandomTag, uround}));
    const auto picked_ids = to_ids(ds, picked);
    report_status(sh, seed, round, "awaiting_labels", static_cast<std::int64_t>(pool.labeled().size()) + b);
    annotate(round, picked_ids);
    pool = update_pools(pool, picked);
    report_status(sh, seed, round, "training", static_cast<std::int64_t>(pool.labeled().size()));

    RoundRecord r;
    r.round = round;
    r.budget = static_cast<std::int64_t>(pool.labeled().size());
    r.sampler = sh.arm.tag;
    r.seed = seed;
    r.metric = train_eval(round, pool);
    r.selected = picked_ids;
    r.short_budget = b < sch.b;
    r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    emit(std::move(r));
  }
  return out;
}

}  // namespace

std::vector<RoundRecord> run_active_learning(const synth::Dataset& ds, const task::TaskSpec& spec,
                                             const Arm& arm, const Schedule& schedule, Oracle& oracle,
                                             std::span<const std::uint64_t> seeds,
                                             const RunOptions& options) {
  if (seeds.empty()) throw Error("run_active_learning needs at least one seed");
  validate(schedule, static_cast<std::int64_t>(ds.splits.train.size()));
  if (arm.kind != SamplerKind::kRandom) {
    sampler::validate(arm.config);
    const bool want_mvaal = arm.kind == SamplerKind::kMvaal;
    if (want_mvaal != (arm.config.mode == sampler::SamplerMode::kMvaal))
      throw Error("arm '" + arm.tag + "' kind does not match its sampler mode");
  }
  Shared sh{ds, spec, arm, schedule, oracle, options, {}, {}, {}};
  sh.val = task::make_task_data(ds, ds.splits.val, spec);
  sh.test = task::make_task_data(ds, ds.splits.test, spec);

  std::vector<std::vector<RoundRecord>> per_seed(seeds.size());
  std::vector<std::exception_ptr> errors(seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < seeds.size();) {
      try {
        per_seed[i] = run_seed(sh, seeds[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto jobs = static_cast<std::size_t>(std::clamp<std::int64_t>(
      options.jobs, 1, static_cast<std::int64_t>(seeds.size())));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<RoundRecord> out;
  for (auto& v : per_seed) out.insert(out.end(), v.begin(), v.end());
  return out;
}

std::vector<RoundReport> aggregate(std::span<const RoundRecord> records) {
  std::map<std::pair<std::string, std::int64_t>, std::vector<const RoundRecord*>> groups;
  for (const auto& r : records) groups[{r.sampler, r.round}].push_back(&r);
  std::vector<RoundReport> out;
  for (const auto& [key, rs] : groups) {
    RoundReport rep;
    rep.sampler = key.first;
    rep.round = key.second;
    rep.budget = rs.front()->budget;
    rep.n_seeds = static_cast<std::int64_t>(rs.size());
    for (const auto* r : rs) {
      if (r->budget != rep.budget)
        throw Error("seeds disagree on the budget of " + rep.sampler + " round " + std::to_string(rep.round));
      rep.mean += r->metric;
    }
    rep.mean /= static_cast<double>(rs.size());
    if (rs.size() > 1) {
      double ss = 0.0;
      for (const auto* r : rs) ss += (r->metric - rep.mean) * (r->metric - rep.mean);
      rep.std = std::sqrt(ss / static_cast<double>(rs.size() - 1));
    }
    out.push_back(rep);
  }
  return out;
}

void write_rounds_csv(const std::filesystem::path& path, std::span<const RoundRecord> records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "round,budget,sampler,seed,metric,wall_time\n";
  for (const auto& r : records) {
    out.precision(17);
    out << r.round << ',' << r.budget << ',' << r.sampler << ',' << r.seed << ',' << r.metric << ',';
    out.precision(6);
    out << r.wall_time << '\n';
  }
}

std::vector<RoundRecord> read_rounds_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "round,budget,sampler,seed,metric,wall_time")
    throw Error(path.string() + ": unexpected header '" + line + "'");
  std::vector<RoundRecord> out;
  std::int64_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 6) throw Error(path.string() + ":" + std::to_string(lineno) + ": expected 6 fields");
    RoundRecord r;
    try {
      r.round = std::stoll(f[0]);
      r.budget = std::stoll(f[1]);
      r.sampler = f[2];
      r.seed = std::stoull(f[3]);
      r.metric = std::stod(f[4]);
      r.wall_time = std::stod(f[5]);
    } catch (const std::exception&) {
      throw Error(path.string() + ":" + std::to_string(lineno) + ": malformed row");
    }
    out.push_back(r);
  }
  return out;
}

void write_aggregate_csv(const std::filesystem::path& path, std::span<const RoundReport> rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  out << "round,budget,sampler,n_seeds,mean,std\n";
  for (const auto& r : rows)
    out << r.round << ',' << r.budget << ',' << r.sampler << ',' << r.n_seeds << ',' << r.mean << ','
        << r.std << '\n';
}

}  // namespace mvaal::al
