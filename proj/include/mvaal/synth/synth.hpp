#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvaal/autodiff/tensor.hpp"

namespace mvaal::synth {

using ad::Tensor;

enum class ShapeFamily { kDisk, kSquare, kCross, kRing };
enum class Texture { kFlat, kStripes, kChecker };

struct ClassProfile {
  std::int64_t class_id = 0;
  double weight = 1.0;
  ShapeFamily family = ShapeFamily::kDisk;
  Texture texture = Texture::kFlat;
};

// Maps the scene's foreground support to the auxiliary image:
// m2 = offset + gain * blur(dilate(support))^gamma, then noise.
struct ModalityLink {
  std::int64_t dilation = 2;
  std::int64_t blur_radius = 1;
  double offset = 0.1;
  double gain = 0.8;
  double gamma = 0.7;
};

struct SynthSpec {
  std::int64_t image_size = 32;
  std::int64_t n_samples = 1875;
  std::vector<ClassProfile> classes;  // empty means default_profile()
  ModalityLink link;
  double noise_sigma = 0.08;
  std::uint64_t seed = 0;
  std::int64_t min_foreground = 16;
  // object size range as a fraction of image_size
  double size_min = 0.16;
  double size_max = 0.28;
  // probability of each extra object (multilabel scenes); 0 gives one object
  double extra_object_prob = 0.0;
  std::int64_t max_extra_objects = 2;
  // low-contrast background blobs outside the mask
  std::int64_t clutter = 2;
  double intensity_min = 0.45;
  double intensity_max = 0.9;
  double split_ratio = 0.8;
  std::int64_t max_retries = 64;
};

// Five classes: disk/flat, disk/stripes, square/flat, cross/checker and a
// rare ring/flat family.
std::vector<ClassProfile> default_profile();
const std::vector<ClassProfile>& profile_of(const SynthSpec& spec);
std::int64_t num_classes(const SynthSpec& spec);

struct SceneObject {
  std::int64_t class_id = 0;
  double cx = 0.0;
  double cy = 0.0;
  double size = 1.0;
  double angle = 0.0;
  double phase = 0.0;
  double intensity = 0.8;
};

struct Blob {
  double cx = 0.0;
  double cy = 0.0;
  double radius = 1.0;
  double intensity = 0.1;
};

struct Scene {
  std::int64_t id = 0;
  std::vector<SceneObject> objects;
  std::vector<Blob> clutter;
  std::uint64_t noise_seed = 0;
};

struct Sample {
  std::int64_t id = 0;
  Tensor m1;    // [1,H,W]
  Tensor m2;    // [1,H,W]
  Tensor mask;  // [1,H,W], 0/1
  std::vector<std::int64_t> labels;  // sorted class ids present
  std::int64_t primary = 0;
};

struct Splits {
  std::vector<std::int64_t> train;
  std::vector<std::int64_t> val;
  std::vector<std::int64_t> test;
};

struct Dataset {
  SynthSpec spec;
  std::vector<Sample> samples;  // samples[i].id == i
  Splits splits;
  std::string content_hash;
};

class ForegroundError : public ad::Error {
 public:
  using ad::Error::Error;
};

class DatasetFormatError : public ad::Error {
 public:
  using ad::Error::Error;
};

// Scene for sample `id`, drawn from a stream derived from (seed, id, attempt).
Scene sample_scene(const SynthSpec& spec, std::int64_t id, std::int64_t attempt = 0);
Sample render_sample(const SynthSpec& spec, const Scene& scene);
// Labels implied by the scene's objects alone.
std::vector<std::int64_t> scene_labels(const Scene& scene);
std::int64_t foreground_count(const Sample& s);
void check_foreground(const Sample& s, std::int64_t min_pixels);

// Geometric predicate shared by mask rendering and tests.
bool inside(const SceneObject& obj, ShapeFamily family, double x, double y);

// Level above which an m2 pixel counts as signal for a noise-free link.
double m2_background(const ModalityLink& link);

struct SplitSizes {
  std::int64_t train = 0;
  std::int64_t val = 0;
  std::int64_t test = 0;
};
SplitSizes split_sizes(std::int64_t n, double ratio);

Dataset generate_dataset(const SynthSpec& spec);

std::string content_hash(const Dataset& ds);

constexpr int kFormatVersion = 1;
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

nlohmann::json to_json(const SynthSpec& spec);
SynthSpec spec_from_json(const nlohmann::json& j);

enum class Modality { kM1, kM2, kMask };
// Stacks the chosen modality of the given sample ids into [B,1,H,W].
Tensor stack(const Dataset& ds, std::span<const std::int64_t> ids, Modality which);

// 8-bit grayscale PNG of one channel image [1,H,W] or [H,W] with values in
// [0,1]; `scale` repeats each pixel scale x scale times.
std::vector<std::uint8_t> encode_png(const Tensor& image, int scale = 1);

}  // namespace mvaal::synth
