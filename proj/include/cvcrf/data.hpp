#pragma once

// Procedural two-view lesion images standing in for paired ultrasound scans.
//
// Each sample is one latent lesion whose severity grows with its class. Both
// views render that lesion with their own projection and noise: the
// longitudinal view shows an elongated cross-section, the transverse view a
// near-circular one. Grade cues are physical lesion size (pixel size divided
// by the per-sample spacing), interior texture frequency and elongation.

#include <cstdint>
#include <string>
#include <vector>

namespace cvcrf {

struct GenSpec {
  std::size_t n = 600;
  std::size_t num_classes = 3;
  std::size_t image_size = 32;
  std::size_t in_channels = 1;
  /// Relative class frequencies; rescaled to n by largest remainder.
  std::vector<double> class_weights{518.0, 772.0, 367.0};
  /// Latent severity distance between adjacent grades.
  double class_gap = 1.0;
  /// Per-lesion latent severity noise (std).
  double severity_jitter = 0.12;
  /// Per-view measurement noise on size and texture (std, relative).
  double view_noise = 0.22;
  double pixel_noise = 0.06;
  double spacing_min = 0.06;  // mm per pixel
  double spacing_max = 0.10;

  void validate() const;
};

struct SamplePair {
  std::size_t index = 0;
  int label = 0;
  double spacing = 0.0;
  std::vector<float> x_long;   // C_in x H x W
  std::vector<float> x_trans;  // C_in x H x W
};

struct Dataset {
  GenSpec spec;
  std::vector<SamplePair> samples;

  std::size_t pixels_per_view() const { return spec.in_channels * spec.image_size * spec.image_size; }
};

/// Class sizes for `spec`: n split by class_weights with largest-remainder rounding.
std::vector<std::size_t> class_counts(const GenSpec& spec);

/// Deterministic in (seed, spec). Samples are ordered by index.
Dataset generate(std::uint64_t seed, const GenSpec& spec);

/// z-score of the spacing, fitted on training samples.
struct SpacingNormalizer {
  double mean = 0.0;
  double stddev = 1.0;

  static SpacingNormalizer fit(const Dataset& data, const std::vector<std::size_t>& indices);
  double operator()(double spacing) const { return (spacing - mean) / stddev; }
};

/// Appends a constant plane holding normalize(spacing): C x H x W -> (C+1) x H x W.
std::vector<double> attach_spacing_channel(const std::vector<float>& image, std::size_t height, std::size_t width,
                                           double spacing, const SpacingNormalizer& normalize);

struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

struct SplitRatios {
  double train = 7.0;
  double val = 1.0;
  double test = 2.0;
};

/// Random disjoint partition of [0, N); each part sorted ascending.
/// Throws if some class has no training member.
DatasetSplit split(const Dataset& data, std::uint64_t seed, SplitRatios ratios = {});

/// Part sizes for n items by largest remainder.
std::vector<std::size_t> apportion(std::size_t n, const std::vector<double>& weights);

/// Shuffled batches of `part`, a pure function of (seed, epoch).
std::vector<std::vector<std::size_t>> batches(const std::vector<std::size_t>& part, std::size_t batch_size,
                                              std::uint64_t seed, std::uint64_t epoch);

/// Mixes seed words into an independent 64-bit stream seed.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

// Cache file: magic "CVCDATA1", u32 version, u64 N, u32 K, u32 H, u32 W,
// u32 C_in, then per sample: u64 index, i32 label, f64 spacing,
// f32[C_in*H*W] longitudinal, f32[C_in*H*W] transverse.
void write_dataset_cache(const std::string& path, const Dataset& data);
Dataset read_dataset_cache(const std::string& path);

}  // namespace cvcrf
