#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "mvaal/harness/harness.hpp"

namespace mvaal::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

std::string fmt(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

// Round-number tick positions covering [lo, hi].
std::vector<double> nice_ticks(double lo, double hi, int target) {
  const double span = hi - lo;
  const double raw = span / std::max(target, 1);
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0})
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  std::vector<double> ticks;
  for (double t = std::ceil(lo / step - 1e-9) * step; t <= hi + step * 1e-9; t += step)
    ticks.push_back(std::abs(t) < step * 1e-9 ? 0.0 : t);
  return ticks;
}

int tick_digits(const std::vector<double>& ticks) {
  if (ticks.size() < 2) return 2;
  const double step = ticks[1] - ticks[0];
  return std::clamp(static_cast<int>(std::ceil(-std::log10(step) + 1e-9)), 0, 6);
}

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

}  // namespace

std::string learning_curve_svg(const std::vector<CurveSeries>& series, const std::string& x_label,
                               const std::string& y_label) {
  constexpr double W = 720, H = 440, left = 70, right = 170, top = 24, bottom = 56;
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series) {
    if (s.x.size() != s.mean.size() || s.x.size() != s.std.size())
      throw al::Error("curve series '" + s.name + "' has mismatched lengths");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.mean[i] - s.std[i]);
      y1 = std::max(y1, s.mean[i] + s.std[i]);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 - x0 < 1e-12) x0 -= 1, x1 += 1;
  if (y1 - y0 < 1e-12) y0 -= 0.05, y1 += 0.05;
  const double pad = 0.06 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  const double pw = W - left - right, ph = H - top - bottom;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  std::ostringstream o;
  o << std::fixed << std::setprecision(2);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  const auto xt = nice_ticks(x0, x1, 6), yt = nice_ticks(y0, y1, 6);
  const int xd = tick_digits(xt), yd = tick_digits(yt);
  for (double t : yt) {
    o << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << py(t) << "\" y2=\"" << py(t)
      << "\" stroke=\"#e5e5e5\"/>\n";
    o << "<text x=\"" << left - 6 << "\" y=\"" << py(t) + 4 << "\" text-anchor=\"end\">" << fmt(t, yd) << "</text>\n";
  }
  for (double t : xt) {
    o << "<line x1=\"" << px(t) << "\" x2=\"" << px(t) << "\" y1=\"" << top + ph << "\" y2=\"" << top + ph + 5
      << "\" stroke=\"#333\"/>\n";
    o << "<text x=\"" << px(t) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">" << fmt(t, xd)
      << "</text>\n";
  }
  o << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"#333\"/>\n";
  o << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 14 << "\" text-anchor=\"middle\">" << xml_escape(x_label)
    << "</text>\n";
  o << "<text transform=\"translate(18," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << xml_escape(y_label) << "</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    if (s.x.empty()) continue;
    o << "<polygon fill=\"" << color << "\" fill-opacity=\"0.15\" stroke=\"none\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) o << px(s.x[i]) << ',' << py(s.mean[i] + s.std[i]) << ' ';
    for (std::size_t i = s.x.size(); i-- > 0;) o << px(s.x[i]) << ',' << py(s.mean[i] - s.std[i]) << ' ';
    o << "\"/>\n";
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) o << px(s.x[i]) << ',' << py(s.mean[i]) << ' ';
    o << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size(); ++i)
      o << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.mean[i]) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    const double ly = top + 14 + 20.0 * static_cast<double>(k);
    o << "<line x1=\"" << left + pw + 14 << "\" x2=\"" << left + pw + 38 << "\" y1=\"" << ly - 4 << "\" y2=\""
      << ly - 4 << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << left + pw + 44 << "\" y=\"" << ly << "\">" << xml_escape(s.name) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

void emit_reports(const fs::path& run_dir) {
  const auto records = al::read_rounds_csv(run_dir / "rounds.csv");
  if (records.empty()) throw al::Error(run_dir.string() + ": rounds.csv has no rows");

  std::string metric = "metric";
  std::vector<std::string> order;
  if (std::ifstream in(run_dir / "manifest.json"); in) {
    const auto manifest = json::parse(in);
    metric = manifest.value("metric", metric);
    if (manifest.contains("arms")) order = manifest["arms"].get<std::vector<std::string>>();
  }
  for (const auto& r : records)
    if (std::find(order.begin(), order.end(), r.sampler) == order.end()) order.push_back(r.sampler);

  // every (sampler, round) cell must be backed by the same seed set
  std::map<std::string, std::map<std::int64_t, std::set<std::uint64_t>>> cover;
  std::set<std::int64_t> all_rounds;
  for (const auto& r : records) {
    if (!cover[r.sampler][r.round].insert(r.seed).second)
      throw al::Error("duplicate row for " + r.sampler + " seed " + std::to_string(r.seed) + " round " +
                      std::to_string(r.round));
    all_rounds.insert(r.round);
  }
  const auto& ref_seeds = cover.begin()->second.begin()->second;
  for (const auto& [sampler, rounds] : cover) {
    if (rounds.size() != all_rounds.size())
      throw al::Error("inconsistent round coverage: " + sampler + " has " + std::to_string(rounds.size()) +
                      " rounds, expected " + std::to_string(all_rounds.size()));
    for (const auto& [round, seeds] : rounds)
      if (seeds != ref_seeds)
        throw al::Error("inconsistent seed coverage: " + sampler + " round " + std::to_string(round) + " has " +
                        std::to_string(seeds.size()) + " seeds, expected " + std::to_string(ref_seeds.size()));
  }

  const auto reports = al::aggregate(records);
  al::write_aggregate_csv(run_dir / "aggregate.csv", reports);

  std::map<std::pair<std::string, std::int64_t>, const al::RoundReport*> cell;
  std::map<std::int64_t, std::int64_t> budget_of;
  for (const auto& rep : reports) {
    cell[{rep.sampler, rep.round}] = &rep;
    budget_of.emplace(rep.round, rep.budget);
  }

  {
    std::ofstream csv(run_dir / "table.csv", std::ios::trunc);
    csv.precision(17);
    csv << "round,budget";
    for (const auto& s : order) csv << ',' << s << "_mean," << s << "_std";
    csv << '\n';
    for (auto [round, budget] : budget_of) {
      csv << round << ',' << budget;
      for (const auto& s : order) csv << ',' << cell.at({s, round})->mean << ',' << cell.at({s, round})->std;
      csv << '\n';
    }
  }
  {
    std::ofstream md(run_dir / "report.md", std::ios::trunc);
    md << "# " << metric << " (mean ± std over " << ref_seeds.size() << " seed"
       << (ref_seeds.size() == 1 ? "" : "s") << ")\n\n| budget |";
    for (const auto& s : order) md << ' ' << s << " |";
    md << "\n|---:|";
    for (std::size_t i = 0; i < order.size(); ++i) md << "---:|";
    md << '\n';
    for (auto [round, budget] : budget_of) {
      md << "| " << budget << " |";
      for (const auto& s : order) {
        const auto* c = cell.at({s, round});
        md << ' ' << fmt(c->mean, 4) << " ± " << fmt(c->std, 4) << " |";
      }
      md << '\n';
    }
  }

  std::vector<CurveSeries> series;
  for (const auto& s : order) {
    CurveSeries cs;
    cs.name = s;
    for (auto [round, budget] : budget_of) {
      cs.x.push_back(static_cast<double>(budget));
      cs.mean.push_back(cell.at({s, round})->mean);
      cs.std.push_back(cell.at({s, round})->std);
    }
    series.push_back(std::move(cs));
  }
  std::ofstream(run_dir / ("curve_" + metric + ".svg"), std::ios::trunc)
      << learning_curve_svg(series, "labeled samples", metric);

  const json schema = {
      {"rounds.csv",
       {{"round", "acquisition round, 0 is the shared initial set"},
        {"budget", "labeled pool size after the round's acquisition"},
        {"sampler", "arm tag (random, vaal, mvaal, mvaal-g<gamma3>)"},
        {"seed", "experiment seed"},
        {"metric", "test-split " + metric + " of the task learner trained on the labeled pool"},
        {"wall_time", "seconds spent on the round (not part of any aggregate)"}}},
      {"aggregate.csv",
       {{"round", "acquisition round"},
        {"budget", "labeled pool size"},
        {"sampler", "arm tag"},
        {"n_seeds", "number of seeds aggregated"},
        {"mean", "mean metric over seeds"},
        {"std", "sample standard deviation over seeds, 0 for one seed"}}},
      {"table.csv",
       {{"round", "acquisition round"},
        {"budget", "labeled pool size"},
        {"<sampler>_mean", "mean metric for that arm"},
        {"<sampler>_std", "sample standard deviation for that arm"}}},
      {"selections.json", "arm -> seed -> round -> dataset ids acquired in that round"},
  };
  std::ofstream(run_dir / "schema.json", std::ios::trunc) << schema.dump(2) << '\n';
}

}  // namespace mvaal::harness
