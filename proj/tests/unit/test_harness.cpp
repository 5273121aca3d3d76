#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "doctest.h"
#include "mvaal/harness/harness.hpp"

namespace al = mvaal::al;
namespace harness = mvaal::harness;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("mvaal_harness_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Tiny but complete experiment: a few seconds per arm.
std::vector<std::string> tiny(const fs::path& out) {
  return {"dataset.spec.n_samples=160", "schedule.initial=16", "schedule.b=8",  "schedule.rounds=2",
          "seeds=[1,2]",                "task.epochs=2",        "task.width=2",  "sampler.epochs=1",
          "sampler.width=2",            "sampler.latent_dim=4", "sampler.disc_hidden=8",
          "output=" + out.string()};
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    rows.push_back(cells);
  }
  return rows;
}

void write_rows(const fs::path& dir, const std::vector<al::RoundRecord>& rows) {
  fs::create_directories(dir);
  al::write_rounds_csv(dir / "rounds.csv", rows);
}

al::RoundRecord row(std::string s, std::int64_t round, std::uint64_t seed, double metric) {
  al::RoundRecord r;
  r.sampler = std::move(s);
  r.round = round;
  r.budget = 10 + 5 * round;
  r.seed = seed;
  r.metric = metric;
  return r;
}

}  // namespace

TEST_CASE("default config round-trips and carries the desk schedule") {
  const auto j = harness::default_config_json();
  const auto c = harness::config_from_json(j);
  CHECK(harness::to_json(c) == j);
  CHECK(c.schedule.initial == 100);
  CHECK(c.schedule.b == 50);
  CHECK(c.schedule.rounds == 5);
  CHECK(c.seeds.size() == 5);
  CHECK(mvaal::synth::split_sizes(c.dataset.n_samples, c.dataset.split_ratio).train == 1200);
  CHECK(c.samplers == std::vector<std::string>{"random", "vaal", "mvaal"});
  CHECK(c.sampler.lambda_gp == 1.0);
  // a partial document fills the rest from the defaults
  CHECK(harness::to_json(harness::config_from_json(json::object())) == j);
}

TEST_CASE("strict parsing names the offending key") {
  auto expect = [](const json& j, const std::string& needle) {
    try {
      harness::config_from_json(j);
      FAIL("accepted: " << j.dump());
    } catch (const harness::ConfigError& e) {
      CHECK_MESSAGE(std::string(e.what()).find(needle) != std::string::npos, std::string(e.what()));
    }
  };
  expect({{"bogus", 1}}, "bogus");
  expect({{"task", {{"epoch", 3}}}}, "epoch");
  expect({{"task", {{"epochs", "3"}}}}, "epochs");
  expect({{"task", {{"epochs", 2.5}}}}, "epochs");
  expect({{"sampler", {{"gamma1", -1.0}}}}, "sampler");
  expect({{"sampler", {{"image_size", 32}}}}, "image_size");
  expect({{"samplers", {"random", "coreset"}}}, "samplers");
  expect({{"samplers", {"random", "random"}}}, "twice");
  expect({{"seeds", json::array()}}, "seeds");
  expect({{"seeds", {1, 1}}}, "duplicate");
  expect({{"oracle", {{"kind", "crowd"}}}}, "oracle.kind");
  expect({{"jobs", 0}}, "jobs");
  expect({{"task", {{"num_classes", 3}}}}, "num_classes");
  expect({{"task", {{"kind", "segmentation"}}}, {"oracle", {{"kind", "remote"}}}}, "segmentation");
}

TEST_CASE("gamma3 sweep requires the mvaal arm") {
  json j = {{"samplers", {"random", "vaal"}}, {"gamma3_sweep", {0.2, 0.4}}};
  CHECK_THROWS_AS(harness::config_from_json(j), harness::ConfigError);
  j["samplers"] = {"random", "mvaal"};
  CHECK(harness::config_from_json(j).gamma3_sweep->size() == 2);
  j["gamma3_sweep"] = {-0.5};
  CHECK_THROWS_AS(harness::config_from_json(j), harness::ConfigError);

  auto c = harness::config_from_json(json::object());
  c.samplers = {"random", "vaal"};
  CHECK_THROWS_AS(harness::gamma3_arms(c), harness::ConfigError);
}

TEST_CASE("schedule overflow is a config error") {
  CHECK_THROWS_AS(harness::config_from_json({{"schedule", {{"initial", 1000}, {"b", 50}, {"rounds", 5}}}}),
                  harness::ConfigError);
  CHECK_NOTHROW(harness::config_from_json({{"schedule", {{"initial", 950}, {"b", 50}, {"rounds", 5}}}}));
}

TEST_CASE("overrides parse JSON values and create nested keys") {
  json j = json::object();
  harness::apply_override(j, "schedule.b=20");
  harness::apply_override(j, "seeds=[3,4]");
  harness::apply_override(j, "output=runs/x");
  harness::apply_override(j, "sampler.gamma3=0.4");
  harness::apply_override(j, "fresh_sampler_each_round=false");
  harness::apply_override(j, "task.kind=multilabel");
  CHECK(j["schedule"]["b"] == 20);
  CHECK(j["seeds"] == json({3, 4}));
  CHECK(j["output"] == "runs/x");
  CHECK(j["sampler"]["gamma3"] == 0.4);
  CHECK(j["fresh_sampler_each_round"] == false);
  CHECK(j["task"]["kind"] == "multilabel");
  CHECK_THROWS_AS(harness::apply_override(j, "schedule.b"), harness::ConfigError);
  CHECK_THROWS_AS(harness::apply_override(j, "=3"), harness::ConfigError);
  CHECK_THROWS_AS(harness::apply_override(j, "a..b=3"), harness::ConfigError);

  const auto c = harness::load_config(std::nullopt, {"schedule.b=20", "seeds=[3,4]"});
  CHECK(c.schedule.b == 20);
  CHECK(c.seeds == std::vector<std::uint64_t>{3, 4});
}

TEST_CASE("config file plus overrides") {
  const auto dir = scratch("cfgfile");
  fs::create_directories(dir);
  std::ofstream(dir / "c.json") << R"({"schedule": {"b": 25}, "seeds": [9]})";
  const auto c = harness::load_config(dir / "c.json", {"schedule.rounds=3"});
  CHECK(c.schedule.b == 25);
  CHECK(c.schedule.rounds == 3);
  CHECK(c.seeds == std::vector<std::uint64_t>{9});
  std::ofstream(dir / "bad.json") << "{ not json";
  CHECK_THROWS_AS(harness::load_config(dir / "bad.json", {}), harness::ConfigError);
  CHECK_THROWS_AS(harness::load_config(dir / "missing.json", {}), harness::ConfigError);
}

TEST_CASE("config hash ignores output and jobs only") {
  const auto a = harness::load_config(std::nullopt, {});
  const auto h = harness::config_hash(a);
  CHECK(h.size() == 64);
  CHECK(harness::config_hash(harness::load_config(std::nullopt, {"output=elsewhere", "jobs=4"})) == h);
  CHECK(harness::config_hash(harness::load_config(std::nullopt, {"seeds=[1,2,3,4]"})) != h);
  CHECK(harness::config_hash(harness::load_config(std::nullopt, {"sampler.gamma3=0.5"})) != h);
  CHECK(harness::config_hash(harness::load_config(std::nullopt, {"dataset.spec.seed=1"})) != h);
}

TEST_CASE("comparison and ablation arms") {
  const auto c = harness::load_config(std::nullopt, {});
  const auto arms = harness::comparison_arms(c);
  REQUIRE(arms.size() == 3);
  CHECK(arms[0].kind == al::SamplerKind::kRandom);
  CHECK(arms[1].config.mode == mvaal::sampler::SamplerMode::kVaal);
  CHECK(arms[1].config.gamma3 == 0.0);
  CHECK(arms[2].config.mode == mvaal::sampler::SamplerMode::kMvaal);
  CHECK(arms[2].config.gamma3 == c.sampler.gamma3);

  const auto abl = harness::gamma3_arms(c);
  REQUIRE(abl.size() == 4);
  const std::vector<std::string> tags{"mvaal-g0.2", "mvaal-g0.4", "mvaal-g0.8", "mvaal-g1.0"};
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(abl[i].tag == tags[i]);
    CHECK(abl[i].kind == al::SamplerKind::kMvaal);
    CHECK(abl[i].config.gamma3 == harness::kDefaultGamma3Sweep[i]);
  }
  auto custom = c;
  custom.gamma3_sweep = std::vector<double>{0.0, 2.5};
  const auto ca = harness::gamma3_arms(custom);
  CHECK(ca[0].tag == "mvaal-g0.0");
  CHECK(ca[1].tag == "mvaal-g2.5");
}

TEST_CASE("aggregate table matches a brute-force recomputation") {
  const auto dir = scratch("agg");
  std::vector<al::RoundRecord> rows;
  std::uint64_t state = 7;
  auto next = [&] {
    state = state * 6364136223846793005ULL + 1442695040888963407ULL;
    return static_cast<double>(state >> 11) / 9007199254740992.0;
  };
  for (const char* s : {"random", "vaal", "mvaal"})
    for (std::uint64_t seed : {1, 2, 3, 4})
      for (std::int64_t round = 0; round <= 3; ++round) rows.push_back(row(s, round, seed, next()));
  write_rows(dir, rows);
  harness::emit_reports(dir);

  std::map<std::pair<std::string, std::string>, std::vector<double>> groups;
  for (const auto& r : rows) groups[{r.sampler, std::to_string(r.round)}].push_back(r.metric);
  const auto agg = read_csv(dir / "aggregate.csv");
  REQUIRE(agg.size() == 1 + groups.size());
  CHECK(agg[0] == std::vector<std::string>{"round", "budget", "sampler", "n_seeds", "mean", "std"});
  for (std::size_t i = 1; i < agg.size(); ++i) {
    const auto& v = groups.at({agg[i][2], agg[i][0]});
    double m = 0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double ss = 0;
    for (double x : v) ss += (x - m) * (x - m);
    CHECK(std::stod(agg[i][3]) == static_cast<double>(v.size()));
    CHECK(std::stod(agg[i][4]) == doctest::Approx(m).epsilon(1e-12));
    CHECK(std::stod(agg[i][5]) == doctest::Approx(std::sqrt(ss / 3.0)).epsilon(1e-12));
  }

  const auto table = read_csv(dir / "table.csv");
  REQUIRE(table.size() == 5);
  CHECK(table[0] == std::vector<std::string>{"round", "budget", "random_mean", "random_std", "vaal_mean",
                                             "vaal_std", "mvaal_mean", "mvaal_std"});
  CHECK(fs::exists(dir / "report.md"));
  CHECK(fs::exists(dir / "curve_metric.svg"));
  const auto schema = json::parse(slurp(dir / "schema.json"));
  CHECK(schema.contains("rounds.csv"));
  CHECK(schema["aggregate.csv"].size() == 6);
}

TEST_CASE("single seed gives zero std; shared round 0 gives an equal first row") {
  const auto dir = scratch("single");
  std::vector<al::RoundRecord> rows;
  for (const char* s : {"random", "vaal", "mvaal"}) {
    rows.push_back(row(s, 0, 5, 0.5));
    rows.push_back(row(s, 1, 5, std::string(s) == "random" ? 0.6 : 0.65));
  }
  write_rows(dir, rows);
  harness::emit_reports(dir);
  for (const auto& r : read_csv(dir / "aggregate.csv"))
    if (r[0] != "round") CHECK(r[5] == "0");
  const auto table = read_csv(dir / "table.csv");
  CHECK(table[1][2] == table[1][4]);
  CHECK(table[1][4] == table[1][6]);
  const auto md = slurp(dir / "report.md");
  CHECK(md.find("| 10 | 0.5000 ± 0.0000 | 0.5000 ± 0.0000 | 0.5000 ± 0.0000 |") != std::string::npos);
}

TEST_CASE("inconsistent seed coverage is rejected") {
  const auto dir = scratch("coverage");
  write_rows(dir, {row("random", 0, 1, 0.5), row("random", 0, 2, 0.5), row("mvaal", 0, 1, 0.5)});
  CHECK_THROWS_AS(harness::emit_reports(dir), al::Error);
  write_rows(dir, {row("random", 0, 1, 0.5), row("random", 1, 1, 0.5), row("mvaal", 0, 1, 0.5)});
  CHECK_THROWS_AS(harness::emit_reports(dir), al::Error);
  write_rows(dir, {row("random", 0, 1, 0.5), row("random", 0, 1, 0.6)});
  CHECK_THROWS_AS(harness::emit_reports(dir), al::Error);
}

TEST_CASE("learning curve svg") {
  std::vector<harness::CurveSeries> s{{"random", {100, 150, 200}, {0.5, 0.6, 0.7}, {0.01, 0.02, 0.0}},
                                      {"a<b", {100, 150, 200}, {0.5, 0.62, 0.71}, {0.0, 0.0, 0.0}}};
  const auto svg = harness::learning_curve_svg(s, "labeled samples", "accuracy");
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  std::size_t polylines = 0, bands = 0;
  for (std::size_t p = 0; (p = svg.find("<polyline", p)) != std::string::npos; ++p) ++polylines;
  for (std::size_t p = 0; (p = svg.find("<polygon", p)) != std::string::npos; ++p) ++bands;
  CHECK(polylines == 2);
  CHECK(bands == 2);
  CHECK(svg.find("a&lt;b") != std::string::npos);
  CHECK(svg.find("nan") == std::string::npos);
  // a flat single-point series must still produce finite coordinates
  const auto flat = harness::learning_curve_svg({{"x", {1}, {0.5}, {0}}}, "x", "y");
  CHECK(flat.find("nan") == std::string::npos);
  CHECK(flat.find("inf") == std::string::npos);
  CHECK_THROWS(harness::learning_curve_svg({{"bad", {1, 2}, {0.5}, {0}}}, "x", "y"));
}

TEST_CASE("rounds=0 yields only the shared baseline row") {
  const auto out = scratch("r0");
  auto o = tiny(out);
  o.push_back("schedule.rounds=0");
  const auto res = harness::run_experiment(harness::load_config(std::nullopt, o), {});
  CHECK(res.records.size() == 6);
  const auto table = read_csv(out / "table.csv");
  REQUIRE(table.size() == 2);
  CHECK(table[1][1] == "16");
  CHECK(table[1][2] == table[1][4]);
  CHECK(table[1][4] == table[1][6]);
}

TEST_CASE("run writes artifacts, DONE makes reruns no-ops, hash changes conflict") {
  const auto out = scratch("run");
  const auto cfg = harness::load_config(std::nullopt, tiny(out));
  std::ostringstream log;
  const auto first = harness::run_experiment(cfg, {}, &log);
  CHECK_FALSE(first.skipped);
  for (const char* f : {"manifest.json", "rounds.csv", "aggregate.csv", "table.csv", "report.md",
                        "curve_accuracy.svg", "schema.json", "selections.json", "DONE"})
    CHECK_MESSAGE(fs::exists(out / f), f);
  CHECK(slurp(out / "DONE") == first.hash + "\n");
  CHECK(first.hash == harness::config_hash(cfg));
  CHECK(log.str().find("[mvaal] seed 2 round 2 budget 32 accuracy") != std::string::npos);

  const auto manifest = json::parse(slurp(out / "manifest.json"));
  CHECK(manifest["hash"] == first.hash);
  CHECK(manifest["dataset_hash"].get<std::string>().size() == 64);
  CHECK(manifest["arms"] == json({"random", "vaal", "mvaal"}));

  // every arm acquires exactly b new, never repeated ids each round
  const auto sel = json::parse(slurp(out / "selections.json"));
  for (const auto& [arm, seeds] : sel.items())
    for (const auto& [seed, rounds] : seeds.items()) {
      std::set<std::int64_t> seen;
      for (const auto& [round, ids] : rounds.items()) {
        CHECK(ids.size() == (round == "0" ? 16u : 8u));
        for (auto id : ids) CHECK(seen.insert(id.get<std::int64_t>()).second);
      }
    }

  const auto aggregate = slurp(out / "aggregate.csv");
  const auto again = harness::run_experiment(cfg, {});
  CHECK(again.skipped);
  CHECK(again.records.size() == first.records.size());
  CHECK(slurp(out / "aggregate.csv") == aggregate);

  auto other = tiny(out);
  other.push_back("seeds=[1]");
  const auto changed = harness::load_config(std::nullopt, other);
  CHECK_THROWS_AS(harness::run_experiment(changed, {}), harness::ResumeConflict);

  // an unfinished run with a different hash is also a conflict
  fs::remove(out / "DONE");
  CHECK_THROWS_AS(harness::run_experiment(changed, {}), harness::ResumeConflict);

  harness::RunFlags force;
  force.force = true;
  const auto forced = harness::run_experiment(changed, force);
  CHECK_FALSE(forced.skipped);
  CHECK(forced.records.size() == 9);
  CHECK(slurp(out / "DONE") == forced.hash + "\n");
}

TEST_CASE("an interrupted run resumes arm by arm with identical results") {
  const auto out = scratch("resume");
  const auto cfg = harness::load_config(std::nullopt, tiny(out));
  harness::run_experiment(cfg, {});
  const auto aggregate = slurp(out / "aggregate.csv");
  fs::remove(out / "DONE");
  fs::remove(out / "arms" / "mvaal.csv");
  std::ostringstream log;
  const auto res = harness::run_experiment(cfg, {}, &log);
  CHECK(log.str().find("[random] resumed from checkpoint") != std::string::npos);
  CHECK(log.str().find("[mvaal] seed 1 round 1") != std::string::npos);
  CHECK(slurp(out / "aggregate.csv") == aggregate);
  CHECK(res.records.size() == 18);
}

TEST_CASE("gamma3 ablation writes four arms on a shared schedule") {
  const auto out = scratch("ablate");
  auto o = tiny(out);
  o.push_back("seeds=[4]");
  harness::RunFlags flags;
  flags.ablate_gamma3 = true;
  const auto res = harness::run_experiment(harness::load_config(std::nullopt, o), flags);
  CHECK(res.dir == out / "ablate-gamma3");
  std::map<std::string, std::vector<std::int64_t>> budgets;
  std::map<std::string, double> round0;
  for (const auto& r : res.records) {
    budgets[r.sampler].push_back(r.budget);
    if (r.round == 0) round0[r.sampler] = r.metric;
  }
  REQUIRE(budgets.size() == 4);
  for (const auto& [tag, b] : budgets) {
    CHECK(b == std::vector<std::int64_t>{16, 24, 32});
    CHECK(round0[tag] == round0.begin()->second);
  }
  const auto table = read_csv(res.dir / "table.csv");
  CHECK(table[0].size() == 2 + 2 * 4);
  CHECK(table[0][2] == "mvaal-g0.2_mean");
}

TEST_CASE("cli exit codes") {
  const auto out = scratch("cli");
  auto call = [](std::vector<std::string> args) {
    args.insert(args.begin(), "mvaal");
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    return harness::run_cli(static_cast<int>(argv.size()), argv.data());
  };
  CHECK(call({"run", "--set", "task.nope=1"}) == 2);
  CHECK(call({"run", "--set", "schedule.initial=5000"}) == 2);
  std::vector<std::string> args{"run"};
  for (const auto& s : tiny(out)) {
    args.push_back("--set");
    args.push_back(s);
  }
  args.push_back("--set");
  args.push_back("schedule.rounds=0");
  CHECK(call(args) == 0);
  CHECK(call(args) == 0);  // DONE: no-op
  auto changed = args;
  changed.push_back("--set");
  changed.push_back("seeds=[7]");
  CHECK(call(changed) == 3);
  CHECK(call({"report", out.string()}) == 0);
  CHECK(call({"gen-data", "--set", "dataset.spec.n_samples=40", "--out", (out / "data").string()}) == 0);
  CHECK(mvaal::synth::load_dataset(out / "data").samples.size() == 40);
  CHECK(call({"run", "--set", "dataset.path=" + (out / "data").string(), "--set", "schedule.initial=8",
              "--set", "schedule.b=4", "--set", "schedule.rounds=0", "--set", "seeds=[1]", "--set",
              "task.epochs=1", "--set", "output=" + (out / "fromdisk").string()}) == 0);
  CHECK(fs::exists(out / "fromdisk" / "DONE"));
}
