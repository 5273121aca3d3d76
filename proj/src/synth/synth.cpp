#include "mvaal/synth/synth.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "mvaal/autodiff/serialize.hpp"
#include "mvaal/util/hash.hpp"
#include "mvaal/util/random.hpp"

namespace mvaal::synth {

using json = nlohmann::json;

namespace {

constexpr std::uint64_t kSceneTag = 0x5ce4e;
constexpr std::uint64_t kSplitTag = 0x5b117;

const ClassProfile& profile_for(const std::vector<ClassProfile>& p, std::int64_t class_id) {
  for (const auto& c : p)
    if (c.class_id == class_id) return c;
  throw ad::Error("unknown class id " + std::to_string(class_id));
}

std::int64_t draw_class(const std::vector<ClassProfile>& p, Rng& rng) {
  double total = 0.0;
  for (const auto& c : p) total += c.weight;
  const double u = rng.uniform() * total;
  double acc = 0.0;
  for (const auto& c : p) {
    acc += c.weight;
    if (u < acc) return c.class_id;
  }
  return p.back().class_id;
}

double texture_value(const SceneObject& o, Texture t, double x, double y) {
  const double c = std::cos(o.angle), s = std::sin(o.angle);
  const double u = (x - o.cx) * c + (y - o.cy) * s;
  const double v = -(x - o.cx) * s + (y - o.cy) * c;
  switch (t) {
    case Texture::kFlat:
      return o.intensity;
    case Texture::kStripes:
      return o.intensity * (0.55 + 0.45 * std::cos(2.0 * std::numbers::pi * u / 4.0 + o.phase));
    case Texture::kChecker: {
      const auto a = static_cast<std::int64_t>(std::floor((u + o.phase) / 3.0));
      const auto b = static_cast<std::int64_t>(std::floor(v / 3.0));
      return ((a + b) & 1) ? o.intensity : 0.45 * o.intensity;
    }
  }
  return o.intensity;
}

void validate(const SynthSpec& spec) {
  if (spec.image_size < 8) throw ad::Error("image_size must be at least 8");
  if (spec.n_samples < 10) throw ad::Error("n_samples must be at least 10");
  if (!(spec.size_min > 0 && spec.size_min <= spec.size_max))
    throw ad::Error("object size range must satisfy 0 < size_min <= size_max");
  if (!(spec.split_ratio > 0 && spec.split_ratio < 1)) throw ad::Error("split_ratio must lie in (0,1)");
  if (spec.noise_sigma < 0) throw ad::Error("noise_sigma must be nonnegative");
  const auto& p = profile_of(spec);
  if (p.empty()) throw ad::Error("class profile is empty");
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(p[i].weight > 0)) throw ad::Error("class weights must be positive");
    if (p[i].class_id != static_cast<std::int64_t>(i))
      throw ad::Error("class ids must be 0..C-1 in order");
  }
}

void append_i64(std::string& out, std::int64_t v) {
  char b[8];
  std::memcpy(b, &v, 8);
  out.append(b, 8);
}

void append_tensor(std::string& out, const Tensor& t) {
  const auto bytes = ad::encode_tensor(t);
  out.append(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

const char* family_name(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::kDisk: return "disk";
    case ShapeFamily::kSquare: return "square";
    case ShapeFamily::kCross: return "cross";
    case ShapeFamily::kRing: return "ring";
  }
  return "disk";
}

ShapeFamily family_from(const std::string& s) {
  if (s == "disk") return ShapeFamily::kDisk;
  if (s == "square") return ShapeFamily::kSquare;
  if (s == "cross") return ShapeFamily::kCross;
  if (s == "ring") return ShapeFamily::kRing;
  throw ad::Error("unknown shape family '" + s + "'");
}

const char* texture_name(Texture t) {
  switch (t) {
    case Texture::kFlat: return "flat";
    case Texture::kStripes: return "stripes";
    case Texture::kChecker: return "checker";
  }
  return "flat";
}

Texture texture_from(const std::string& s) {
  if (s == "flat") return Texture::kFlat;
  if (s == "stripes") return Texture::kStripes;
  if (s == "checker") return Texture::kChecker;
  throw ad::Error("unknown texture '" + s + "'");
}

}  // namespace

std::vector<ClassProfile> default_profile() {
  return {
      {0, 0.30, ShapeFamily::kDisk, Texture::kFlat},
      {1, 0.30, ShapeFamily::kDisk, Texture::kStripes},
      {2, 0.20, ShapeFamily::kSquare, Texture::kFlat},
      {3, 0.15, ShapeFamily::kCross, Texture::kChecker},
      {4, 0.05, ShapeFamily::kRing, Texture::kFlat},
  };
}

const std::vector<ClassProfile>& profile_of(const SynthSpec& spec) {
  static const std::vector<ClassProfile> fallback = default_profile();
  return spec.classes.empty() ? fallback : spec.classes;
}

std::int64_t num_classes(const SynthSpec& spec) {
  return static_cast<std::int64_t>(profile_of(spec).size());
}

bool inside(const SceneObject& o, ShapeFamily family, double x, double y) {
  const double dx = x - o.cx, dy = y - o.cy;
  const double r2 = dx * dx + dy * dy;
  const double s = o.size;
  switch (family) {
    case ShapeFamily::kDisk:
      return r2 <= s * s;
    case ShapeFamily::kRing:
      return r2 <= s * s && r2 >= 0.3025 * s * s;  // inner radius 0.55 s
    case ShapeFamily::kSquare:
    case ShapeFamily::kCross: {
      const double c = std::cos(o.angle), sn = std::sin(o.angle);
      const double u = std::abs(dx * c + dy * sn);
      const double v = std::abs(-dx * sn + dy * c);
      if (family == ShapeFamily::kSquare) return u <= 0.8 * s && v <= 0.8 * s;
      return (u <= s && v <= s / 3.0) || (v <= s && u <= s / 3.0);
    }
  }
  return false;
}

Scene sample_scene(const SynthSpec& spec, std::int64_t id, std::int64_t attempt) {
  const auto& profile = profile_of(spec);
  Rng rng(derive_seed(spec.seed, {kSceneTag, static_cast<std::uint64_t>(id),
                                  static_cast<std::uint64_t>(attempt)}));
  Scene scene;
  scene.id = id;
  const double n = static_cast<double>(spec.image_size);

  auto place = [&](std::int64_t cls) {
    SceneObject o;
    o.class_id = cls;
    o.size = rng.uniform(spec.size_min, spec.size_max) * n;
    // keep the whole object (including rotated square corners) in frame
    const double margin = 1.15 * o.size + 0.5;
    const double lo = margin, hi = n - 1.0 - margin;
    o.cx = lo < hi ? rng.uniform(lo, hi) : (n - 1.0) / 2.0;
    o.cy = lo < hi ? rng.uniform(lo, hi) : (n - 1.0) / 2.0;
    o.angle = rng.uniform(0.0, std::numbers::pi);
    o.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    o.intensity = rng.uniform(spec.intensity_min, spec.intensity_max);
    scene.objects.push_back(o);
  };

  place(draw_class(profile, rng));
  for (std::int64_t k = 0; k < spec.max_extra_objects; ++k) {
    if (rng.uniform() < spec.extra_object_prob) place(draw_class(profile, rng));
  }
  for (std::int64_t k = 0; k < spec.clutter; ++k) {
    Blob b;
    b.cx = rng.uniform(0.0, n - 1.0);
    b.cy = rng.uniform(0.0, n - 1.0);
    b.radius = rng.uniform(1.5, 3.5);
    b.intensity = rng.uniform(0.08, 0.25);
    scene.clutter.push_back(b);
  }
  scene.noise_seed = rng.next();
  return scene;
}

std::vector<std::int64_t> scene_labels(const Scene& scene) {
  std::vector<std::int64_t> out;
  for (const auto& o : scene.objects) out.push_back(o.class_id);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

double m2_background(const ModalityLink& link) { return link.offset; }

Sample render_sample(const SynthSpec& spec, const Scene& scene) {
  const auto& profile = profile_of(spec);
  const std::int64_t n = spec.image_size;
  const auto idx = [n](std::int64_t y, std::int64_t x) { return static_cast<std::size_t>(y * n + x); };
  std::vector<double> m1(static_cast<std::size_t>(n * n), 0.05);
  std::vector<double> mask(m1.size(), 0.0);

  for (const auto& b : scene.clutter) {
    for (std::int64_t y = 0; y < n; ++y)
      for (std::int64_t x = 0; x < n; ++x) {
        const double d2 = (x - b.cx) * (x - b.cx) + (y - b.cy) * (y - b.cy);
        m1[idx(y, x)] += b.intensity * std::exp(-d2 / (2.0 * b.radius * b.radius));
      }
  }
  for (const auto& o : scene.objects) {
    const auto& cp = profile_for(profile, o.class_id);
    for (std::int64_t y = 0; y < n; ++y)
      for (std::int64_t x = 0; x < n; ++x) {
        if (!inside(o, cp.family, static_cast<double>(x), static_cast<double>(y))) continue;
        m1[idx(y, x)] = texture_value(o, cp.texture, static_cast<double>(x), static_cast<double>(y));
        mask[idx(y, x)] = 1.0;
      }
  }

  // dilate the support with a disk, then box-blur
  const auto& link = spec.link;
  std::vector<double> dil(mask.size(), 0.0);
  const std::int64_t d = link.dilation;
  for (std::int64_t y = 0; y < n; ++y)
    for (std::int64_t x = 0; x < n; ++x) {
      if (mask[idx(y, x)] == 0.0) continue;
      for (std::int64_t dy = -d; dy <= d; ++dy)
        for (std::int64_t dx = -d; dx <= d; ++dx) {
          if (dx * dx + dy * dy > d * d) continue;
          const std::int64_t yy = y + dy, xx = x + dx;
          if (yy >= 0 && yy < n && xx >= 0 && xx < n) dil[idx(yy, xx)] = 1.0;
        }
    }
  std::vector<double> m2(mask.size());
  const std::int64_t r = link.blur_radius;
  const double window = static_cast<double>((2 * r + 1) * (2 * r + 1));
  for (std::int64_t y = 0; y < n; ++y)
    for (std::int64_t x = 0; x < n; ++x) {
      double acc = 0.0;
      for (std::int64_t dy = -r; dy <= r; ++dy)
        for (std::int64_t dx = -r; dx <= r; ++dx) {
          const std::int64_t yy = y + dy, xx = x + dx;
          if (yy >= 0 && yy < n && xx >= 0 && xx < n) acc += dil[idx(yy, xx)];
        }
      m2[idx(y, x)] = link.offset + link.gain * std::pow(acc / window, link.gamma);
    }

  Rng n1(derive_seed(scene.noise_seed, {1}));
  Rng n2(derive_seed(scene.noise_seed, {2}));
  if (spec.noise_sigma > 0) {
    for (auto& v : m1) v += spec.noise_sigma * n1.normal();
    for (auto& v : m2) v += spec.noise_sigma * n2.normal();
  }
  for (auto& v : m1) v = std::clamp(v, 0.0, 1.0);
  for (auto& v : m2) v = std::clamp(v, 0.0, 1.0);

  Sample s;
  s.id = scene.id;
  s.m1 = Tensor({1, n, n}, std::move(m1));
  s.m2 = Tensor({1, n, n}, std::move(m2));
  s.mask = Tensor({1, n, n}, std::move(mask));
  s.labels = scene_labels(scene);
  s.primary = scene.objects.empty() ? -1 : scene.objects.front().class_id;
  return s;
}

std::int64_t foreground_count(const Sample& s) {
  std::int64_t c = 0;
  for (double v : s.mask.data()) c += v > 0.5;
  return c;
}

void check_foreground(const Sample& s, std::int64_t min_pixels) {
  const auto c = foreground_count(s);
  if (c < min_pixels)
    throw ForegroundError("sample " + std::to_string(s.id) + " has " + std::to_string(c) +
                          " foreground pixels, fewer than " + std::to_string(min_pixels));
}

SplitSizes split_sizes(std::int64_t n, double ratio) {
  const auto floor_of = [](double v) { return static_cast<std::int64_t>(std::floor(v + 1e-9)); };
  const std::int64_t train_full = floor_of(static_cast<double>(n) * ratio);
  const std::int64_t train = floor_of(static_cast<double>(train_full) * ratio);
  return {train, train_full - train, n - train_full};
}

Dataset generate_dataset(const SynthSpec& spec) {
  validate(spec);
  Dataset ds;
  ds.spec = spec;
  ds.samples.reserve(static_cast<std::size_t>(spec.n_samples));
  for (std::int64_t id = 0; id < spec.n_samples; ++id) {
    bool ok = false;
    for (std::int64_t attempt = 0; attempt < spec.max_retries && !ok; ++attempt) {
      Sample s = render_sample(spec, sample_scene(spec, id, attempt));
      if (foreground_count(s) >= spec.min_foreground) {
        ds.samples.push_back(std::move(s));
        ok = true;
      }
    }
    if (!ok)
      throw ForegroundError("sample " + std::to_string(id) + " never reached " +
                            std::to_string(spec.min_foreground) + " foreground pixels in " +
                            std::to_string(spec.max_retries) + " attempts");
  }

  std::vector<std::int64_t> perm(static_cast<std::size_t>(spec.n_samples));
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<std::int64_t>(i);
  Rng rng(derive_seed(spec.seed, {kSplitTag}));
  rng.shuffle(perm);
  const auto sz = split_sizes(spec.n_samples, spec.split_ratio);
  auto take = [&](std::int64_t from, std::int64_t count) {
    std::vector<std::int64_t> v(perm.begin() + from, perm.begin() + from + count);
    std::sort(v.begin(), v.end());
    return v;
  };
  ds.splits.train = take(0, sz.train);
  ds.splits.val = take(sz.train, sz.val);
  ds.splits.test = take(sz.train + sz.val, sz.test);
  ds.content_hash = content_hash(ds);
  return ds;
}

std::string content_hash(const Dataset& ds) {
  std::string payload;
  for (const auto& s : ds.samples) {
    append_i64(payload, s.id);
    append_i64(payload, s.primary);
    append_i64(payload, static_cast<std::int64_t>(s.labels.size()));
    for (auto l : s.labels) append_i64(payload, l);
    append_tensor(payload, s.m1);
    append_tensor(payload, s.m2);
    append_tensor(payload, s.mask);
  }
  for (const auto* split : {&ds.splits.train, &ds.splits.val, &ds.splits.test}) {
    append_i64(payload, static_cast<std::int64_t>(split->size()));
    for (auto i : *split) append_i64(payload, i);
  }
  return blob_hash(payload);
}

json to_json(const SynthSpec& s) {
  json classes = json::array();
  for (const auto& c : profile_of(s))
    classes.push_back({{"class_id", c.class_id},
                       {"weight", c.weight},
                       {"family", family_name(c.family)},
                       {"texture", texture_name(c.texture)}});
  return {{"image_size", s.image_size},
          {"n_samples", s.n_samples},
          {"classes", classes},
          {"link",
           {{"dilation", s.link.dilation},
            {"blur_radius", s.link.blur_radius},
            {"offset", s.link.offset},
            {"gain", s.link.gain},
            {"gamma", s.link.gamma}}},
          {"noise_sigma", s.noise_sigma},
          {"seed", s.seed},
          {"min_foreground", s.min_foreground},
          {"size_min", s.size_min},
          {"size_max", s.size_max},
          {"extra_object_prob", s.extra_object_prob},
          {"max_extra_objects", s.max_extra_objects},
          {"clutter", s.clutter},
          {"intensity_min", s.intensity_min},
          {"intensity_max", s.intensity_max},
          {"split_ratio", s.split_ratio},
          {"max_retries", s.max_retries}};
}

SynthSpec spec_from_json(const json& j) {
  SynthSpec s;
  static const std::vector<std::string> known = {
      "image_size",     "n_samples",     "classes",           "link",
      "noise_sigma",    "seed",          "min_foreground",    "size_min",
      "size_max",       "extra_object_prob", "max_extra_objects", "clutter",
      "intensity_min",  "intensity_max", "split_ratio",       "max_retries"};
  for (const auto& [k, _] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw ad::Error("unknown dataset key '" + k + "'");
  s.image_size = j.value("image_size", s.image_size);
  s.n_samples = j.value("n_samples", s.n_samples);
  s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
  s.seed = j.value("seed", s.seed);
  s.min_foreground = j.value("min_foreground", s.min_foreground);
  s.size_min = j.value("size_min", s.size_min);
  s.size_max = j.value("size_max", s.size_max);
  s.extra_object_prob = j.value("extra_object_prob", s.extra_object_prob);
  s.max_extra_objects = j.value("max_extra_objects", s.max_extra_objects);
  s.clutter = j.value("clutter", s.clutter);
  s.intensity_min = j.value("intensity_min", s.intensity_min);
  s.intensity_max = j.value("intensity_max", s.intensity_max);
  s.split_ratio = j.value("split_ratio", s.split_ratio);
  s.max_retries = j.value("max_retries", s.max_retries);
  if (j.contains("link")) {
    const auto& l = j["link"];
    s.link.dilation = l.value("dilation", s.link.dilation);
    s.link.blur_radius = l.value("blur_radius", s.link.blur_radius);
    s.link.offset = l.value("offset", s.link.offset);
    s.link.gain = l.value("gain", s.link.gain);
    s.link.gamma = l.value("gamma", s.link.gamma);
  }
  if (j.contains("classes")) {
    for (const auto& c : j["classes"])
      s.classes.push_back({c.at("class_id").get<std::int64_t>(), c.at("weight").get<double>(),
                           family_from(c.at("family")), texture_from(c.at("texture"))});
  }
  return s;
}

namespace {

std::filesystem::path blob_path(const std::filesystem::path& dir, std::int64_t id) {
  char name[32];
  std::snprintf(name, sizeof name, "%06lld.mvt", static_cast<long long>(id));
  return dir / "samples" / name;
}

void write_json(const std::filesystem::path& p, const json& j) {
  std::ofstream out(p);
  if (!out) throw ad::Error("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw DatasetFormatError("missing file " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DatasetFormatError("malformed " + p.string() + ": " + e.what());
  }
}

}  // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "samples");
  json labels = json::array();
  for (const auto& s : ds.samples) {
    std::ofstream out(blob_path(dir, s.id), std::ios::binary | std::ios::trunc);
    if (!out) throw ad::Error("cannot write sample blob for id " + std::to_string(s.id));
    ad::write_tensor(out, s.m1);
    ad::write_tensor(out, s.m2);
    ad::write_tensor(out, s.mask);
    labels.push_back({{"id", s.id}, {"primary", s.primary}, {"labels", s.labels}});
  }
  write_json(dir / "labels.json", labels);
  write_json(dir / "train.json", {{"split", "train"}, {"ids", ds.splits.train}});
  write_json(dir / "val.json", {{"split", "val"}, {"ids", ds.splits.val}});
  write_json(dir / "test.json", {{"split", "test"}, {"ids", ds.splits.test}});
  write_json(dir / "manifest.json",
             {{"format_version", kFormatVersion},
              {"spec", to_json(ds.spec)},
              {"n_samples", ds.samples.size()},
              {"content_hash", ds.content_hash},
              {"splits", {{"train", "train.json"}, {"val", "val.json"}, {"test", "test.json"}}},
              {"labels", "labels.json"},
              {"blobs", "samples"}});
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const json manifest = read_json(dir / "manifest.json");
  const int version = manifest.value("format_version", -1);
  if (version != kFormatVersion)
    throw DatasetFormatError("unsupported dataset format version " + std::to_string(version) +
                             " (this build reads version " + std::to_string(kFormatVersion) + ")");
  Dataset ds;
  ds.spec = spec_from_json(manifest.at("spec"));
  const auto n = manifest.at("n_samples").get<std::int64_t>();
  const json labels = read_json(dir / manifest.at("labels").get<std::string>());
  if (static_cast<std::int64_t>(labels.size()) != n)
    throw DatasetFormatError("labels.json lists " + std::to_string(labels.size()) + " samples, expected " +
                             std::to_string(n));
  ds.samples.resize(static_cast<std::size_t>(n));
  for (std::int64_t id = 0; id < n; ++id) {
    const auto p = blob_path(dir, id);
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DatasetFormatError("missing sample blob " + p.string());
    auto& s = ds.samples[static_cast<std::size_t>(id)];
    try {
      s.m1 = ad::read_tensor(in);
      s.m2 = ad::read_tensor(in);
      s.mask = ad::read_tensor(in);
    } catch (const ad::Error& e) {
      throw DatasetFormatError("corrupt sample blob " + p.string() + ": " + e.what());
    }
    const auto& l = labels.at(static_cast<std::size_t>(id));
    if (l.at("id").get<std::int64_t>() != id) throw DatasetFormatError("labels.json out of order");
    s.id = id;
    s.primary = l.at("primary");
    s.labels = l.at("labels").get<std::vector<std::int64_t>>();
  }
  const auto& sp = manifest.at("splits");
  ds.splits.train = read_json(dir / sp.at("train").get<std::string>()).at("ids").get<std::vector<std::int64_t>>();
  ds.splits.val = read_json(dir / sp.at("val").get<std::string>()).at("ids").get<std::vector<std::int64_t>>();
  ds.splits.test = read_json(dir / sp.at("test").get<std::string>()).at("ids").get<std::vector<std::int64_t>>();
  ds.content_hash = content_hash(ds);
  const auto expected = manifest.at("content_hash").get<std::string>();
  if (ds.content_hash != expected)
    throw DatasetFormatError("content hash mismatch: manifest has " + expected + ", files hash to " +
                             ds.content_hash);
  return ds;
}

Tensor stack(const Dataset& ds, std::span<const std::int64_t> ids, Modality which) {
  const std::int64_t n = ds.spec.image_size;
  const auto plane = static_cast<std::size_t>(n * n);
  std::vector<double> out(ids.size() * plane);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= static_cast<std::int64_t>(ds.samples.size()))
      throw ad::Error("sample id " + std::to_string(ids[i]) + " out of range");
    const auto& s = ds.samples[static_cast<std::size_t>(ids[i])];
    const Tensor& t = which == Modality::kM1 ? s.m1 : which == Modality::kM2 ? s.m2 : s.mask;
    std::copy(t.data().begin(), t.data().end(), out.begin() + static_cast<std::ptrdiff_t>(i * plane));
  }
  return Tensor({static_cast<std::int64_t>(ids.size()), 1, n, n}, std::move(out));
}

std::vector<std::uint8_t> encode_png(const Tensor& image, int scale) {
  const auto& sh = image.shape();
  if (!((sh.size() == 3 && sh[0] == 1) || sh.size() == 2))
    throw ad::ShapeError("encode_png expects [1,H,W] or [H,W], got " + ad::shape_str(sh));
  if (scale < 1) throw ad::Error("png scale must be positive");
  const auto h = static_cast<int>(sh[sh.size() - 2]);
  const auto w = static_cast<int>(sh[sh.size() - 1]);
  const int H = h * scale, W = w * scale;
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(H) * W);
  const auto d = image.data();
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double v = std::clamp(d[static_cast<std::size_t>((y / scale) * w + x / scale)], 0.0, 1.0);
      pixels[static_cast<std::size_t>(y) * W + x] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }

  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(W);
  img.height = static_cast<png_uint_32>(H);
  img.format = PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, pixels.data(), 0, nullptr))
    throw ad::Error(std::string("png sizing failed: ") + img.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, pixels.data(), 0, nullptr))
    throw ad::Error(std::string("png encoding failed: ") + img.message);
  out.resize(size);
  return out;
}

}  // namespace mvaal::synth
