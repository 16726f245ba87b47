#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pairforge/tensor.hpp"
#include "pairforge/vocab.hpp"

namespace pf::synth {

enum class ShapeKind : std::uint8_t { Disc, Bar, Ring, Wedge, Blob };
enum class Intensity : std::uint8_t { Faint, Dense };
enum class Quadrant : std::uint8_t { UpperLeft, UpperRight, LowerLeft, LowerRight };

inline constexpr std::size_t kNumShapes = 5;
inline constexpr std::size_t kNumIntensities = 2;
inline constexpr std::size_t kNumQuadrants = 4;
inline constexpr std::size_t kNumClasses = kNumShapes * kNumIntensities;
inline constexpr std::size_t kImageSize = 64;

struct Attribute {
  ShapeKind shape;
  Intensity intensity;
  Quadrant quadrant;
  bool operator==(const Attribute&) const = default;
};

/// Class index in [0, 10): intensity-major over shapes.
std::size_t class_index(ShapeKind shape, Intensity intensity);
/// Human-readable class name, e.g. "dense disc" (both words are vocabulary entries).
std::string class_name(std::size_t class_id);
std::string shape_word(ShapeKind s);
std::string intensity_word(Intensity i);

struct SceneSpec {
  std::vector<Attribute> attributes;  // 0..3, distinct quadrants
  std::uint64_t seed = 0;
  bool operator==(const SceneSpec&) const = default;
};

using Labels = std::array<std::uint8_t, kNumClasses>;

struct Report {
  TokenSequence findings;
  TokenSequence impression;
  Labels labels{};
};

SceneSpec generate_scene(std::uint64_t seed, int max_attrs = 3);
/// 1x64x64 grayscale image in [0, 1].
Tensor render_image(const SceneSpec& scene);
Report write_report(const SceneSpec& scene, std::uint64_t seed);
Labels labels_of(const SceneSpec& scene);

inline constexpr double kBackgroundLevel = 0.10;
inline constexpr double kBackgroundNoise = 0.04;

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

/// Training-data fractions with precomputed nested subsets.
inline const std::vector<double> kStandardFractions{0.01, 0.05, 0.1, 0.2, 0.5, 1.0};
std::string fraction_key(double fraction);

struct Sample {
  std::uint32_t id = 0;
  std::uint64_t seed = 0;
  SceneSpec scene;
  Report report;
};

struct DatasetManifest {
  std::size_t n = 0;
  std::uint64_t seed = 0;
  int max_attrs = 3;
  SplitFractions fracs;
  std::vector<std::uint32_t> train, val, test;
  /// Nested subsets of `train`, keyed by fraction_key().
  std::map<std::string, std::vector<std::uint32_t>> fractions;
};

/// Paired images and reports held in memory.
class Dataset {
 public:
  static Dataset generate(std::size_t n, std::uint64_t seed, SplitFractions fracs = {},
                          int max_attrs = 3);
  static Dataset load(const std::filesystem::path& dir);

  /// Writes manifest.json and images.bin into `dir`, creating it if needed.
  void save(const std::filesystem::path& dir) const;

  const DatasetManifest& manifest() const { return manifest_; }
  std::size_t size() const { return samples_.size(); }
  const Sample& sample(std::uint32_t id) const { return samples_.at(id); }
  /// 64*64 pixels of sample `id`.
  std::span<const double> image(std::uint32_t id) const;
  Tensor image_tensor(std::uint32_t id) const;

  const std::vector<std::uint32_t>& split(const std::string& name) const;
  const std::vector<std::uint32_t>& fraction(double f) const;

 private:
  DatasetManifest manifest_;
  std::vector<Sample> samples_;
  std::vector<double> pixels_;
};

DatasetManifest build_dataset(std::size_t n, std::uint64_t seed,
                              const std::filesystem::path& out_dir, SplitFractions fracs = {},
                              int max_attrs = 3);

}  // namespace pf::synth
