#include "cvcrf/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

#include "cvcrf/binary_io.hpp"

namespace cvcrf {

namespace {

constexpr double kBaseThicknessMm = 0.2;
constexpr double kBackground = 0.15;
constexpr double kWallBoost = 0.10;
constexpr double kLesionLevel = 0.65;
constexpr double kTextureAmplitude = 0.15;

struct LesionView {
  double cx, cy;
  double semi_x, semi_y;
  double frequency;  // texture cycles per pixel
  double theta, phase;
};

void render(const LesionView& v, std::size_t size, double pixel_noise, std::mt19937_64& rng, float* out) {
  std::normal_distribution<double> noise(0.0, pixel_noise);
  const double wall_y = v.cy + v.semi_y;
  const double sharpness = 2.0 * std::min(v.semi_x, v.semi_y);
  const double kx = 2.0 * std::numbers::pi * v.frequency * std::cos(v.theta);
  const double ky = 2.0 * std::numbers::pi * v.frequency * std::sin(v.theta);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      const double dy_wall = py - wall_y;
      const double background = kBackground + kWallBoost * std::exp(-dy_wall * dy_wall / 4.5);
      const double dx = (px - v.cx) / v.semi_x, dy = (py - v.cy) / v.semi_y;
      const double dist = std::sqrt(dx * dx + dy * dy);
      const double inside = 1.0 / (1.0 + std::exp(-(1.0 - dist) * sharpness));
      const double texture = kLesionLevel + kTextureAmplitude * std::sin(kx * px + ky * py + v.phase);
      out[y * size + x] = static_cast<float>(background * (1.0 - inside) + texture * inside + noise(rng));
    }
  }
}

}  // namespace

void GenSpec::validate() const {
  if (num_classes < 2) throw std::invalid_argument("GenSpec: need at least 2 classes");
  if (n < num_classes) throw std::invalid_argument("GenSpec: n must be at least the number of classes");
  if (class_weights.size() != num_classes) {
    throw std::invalid_argument("GenSpec: class_weights has " + std::to_string(class_weights.size()) +
                                " entries for " + std::to_string(num_classes) + " classes");
  }
  for (double w : class_weights) {
    if (!(w > 0.0)) throw std::invalid_argument("GenSpec: class weights must be positive");
  }
  if (image_size < 16 || image_size % 16 != 0) throw std::invalid_argument("GenSpec: image_size must be a multiple of 16");
  if (in_channels < 1) throw std::invalid_argument("GenSpec: in_channels must be positive");
  if (!(spacing_min > 0.0) || spacing_max < spacing_min) throw std::invalid_argument("GenSpec: bad spacing range");
  if (class_gap < 0.0 || severity_jitter < 0.0 || view_noise < 0.0 || pixel_noise < 0.0) {
    throw std::invalid_argument("GenSpec: gap and noise levels must be nonnegative");
  }
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over a combined word.
  std::uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<std::size_t> apportion(std::size_t n, const std::vector<double>& weights) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<std::size_t> counts(weights.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    const double exact = static_cast<double>(n) * weights[k] / total;
    counts[k] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[k];
    remainders.emplace_back(exact - std::floor(exact), k);
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](auto& a, auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++counts[remainders[i % remainders.size()].second];
  return counts;
}

std::vector<std::size_t> class_counts(const GenSpec& spec) {
  spec.validate();
  auto counts = apportion(spec.n, spec.class_weights);
  // Every grade needs a member; borrow from the largest class.
  for (auto& c : counts) {
    if (c == 0) {
      ++c;
      --*std::max_element(counts.begin(), counts.end());
    }
  }
  return counts;
}

Dataset generate(std::uint64_t seed, const GenSpec& spec) {
  const auto counts = class_counts(spec);
  std::vector<int> labels;
  for (std::size_t k = 0; k < counts.size(); ++k) labels.insert(labels.end(), counts[k], static_cast<int>(k));
  std::mt19937_64 label_rng(mix_seed(seed, 0xDA7A));
  std::shuffle(labels.begin(), labels.end(), label_rng);

  Dataset data;
  data.spec = spec;
  data.samples.resize(spec.n);
  const std::size_t plane = spec.image_size * spec.image_size;
  const double size = static_cast<double>(spec.image_size);
  const double max_semi = size / 2.0 - 2.0;

  for (std::size_t i = 0; i < spec.n; ++i) {
    std::mt19937_64 rng(mix_seed(seed, i + 1));
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    SamplePair& s = data.samples[i];
    s.index = i;
    s.label = labels[i];
    s.spacing = spec.spacing_min + (spec.spacing_max - spec.spacing_min) * unit(rng);
    const double severity = spec.class_gap * s.label + spec.severity_jitter * gauss(rng);
    const double cx = size / 2.0 + 2.0 * (unit(rng) - 0.5);
    const double cy = size / 2.0 + 2.0 * (unit(rng) - 0.5);

    auto view = [&](bool longitudinal) {
      const double observed = severity + spec.view_noise * gauss(rng);
      const double radius_px = kBaseThicknessMm * std::max(0.2, 1.0 + 0.5 * observed) / s.spacing;
      const double elongation = longitudinal ? 1.3 + 0.2 * std::max(0.0, observed) : 1.0 + 0.1 * unit(rng);
      LesionView v;
      v.cx = cx;
      v.cy = cy;
      v.semi_x = std::clamp(radius_px * elongation, 1.0, max_semi);
      v.semi_y = std::clamp(radius_px, 1.0, max_semi);
      v.frequency = std::max(0.03, 0.10 + 0.06 * observed);
      v.theta = std::numbers::pi * unit(rng);
      v.phase = 2.0 * std::numbers::pi * unit(rng);
      return v;
    };
    const LesionView lv = view(true);
    const LesionView tv = view(false);

    s.x_long.assign(spec.in_channels * plane, 0.0f);
    s.x_trans.assign(spec.in_channels * plane, 0.0f);
    for (std::size_t c = 0; c < spec.in_channels; ++c) {
      render(lv, spec.image_size, spec.pixel_noise, rng, s.x_long.data() + c * plane);
      render(tv, spec.image_size, spec.pixel_noise, rng, s.x_trans.data() + c * plane);
    }
  }
  return data;
}

SpacingNormalizer SpacingNormalizer::fit(const Dataset& data, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw std::invalid_argument("SpacingNormalizer: no samples");
  double mean = 0.0;
  for (std::size_t i : indices) mean += data.samples.at(i).spacing;
  mean /= static_cast<double>(indices.size());
  double var = 0.0;
  for (std::size_t i : indices) {
    const double d = data.samples[i].spacing - mean;
    var += d * d;
  }
  var /= static_cast<double>(indices.size());
  SpacingNormalizer norm;
  norm.mean = mean;
  norm.stddev = var > 0.0 ? std::sqrt(var) : 1.0;
  return norm;
}

std::vector<double> attach_spacing_channel(const std::vector<float>& image, std::size_t height, std::size_t width,
                                           double spacing, const SpacingNormalizer& normalize) {
  if (!(spacing > 0.0)) throw std::invalid_argument("attach_spacing_channel: spacing must be positive");
  const std::size_t plane = height * width;
  if (plane == 0 || image.size() % plane != 0) {
    throw std::invalid_argument("attach_spacing_channel: image size is not a multiple of H*W");
  }
  std::vector<double> out(image.begin(), image.end());
  out.resize(image.size() + plane, normalize(spacing));
  return out;
}

DatasetSplit split(const Dataset& data, std::uint64_t seed, SplitRatios ratios) {
  const std::size_t n = data.samples.size();
  const auto sizes = apportion(n, {ratios.train, ratios.val, ratios.test});
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix_seed(seed, 0x5911));
  std::shuffle(order.begin(), order.end(), rng);

  DatasetSplit parts;
  auto take = [&](std::vector<std::size_t>& dst, std::size_t from, std::size_t count) {
    dst.assign(order.begin() + static_cast<std::ptrdiff_t>(from),
               order.begin() + static_cast<std::ptrdiff_t>(from + count));
    std::sort(dst.begin(), dst.end());
  };
  take(parts.train, 0, sizes[0]);
  take(parts.val, sizes[0], sizes[1]);
  take(parts.test, sizes[0] + sizes[1], sizes[2]);

  std::vector<std::size_t> members(data.spec.num_classes, 0);
  for (std::size_t i : parts.train) ++members.at(static_cast<std::size_t>(data.samples[i].label));
  for (std::size_t k = 0; k < members.size(); ++k) {
    if (members[k] == 0) throw std::invalid_argument("split: class " + std::to_string(k) + " has no training sample");
  }
  return parts;
}

std::vector<std::vector<std::size_t>> batches(const std::vector<std::size_t>& part, std::size_t batch_size,
                                              std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size < 1) throw std::invalid_argument("batches: batch_size must be at least 1");
  std::vector<std::size_t> order = part;
  std::mt19937_64 rng(mix_seed(mix_seed(seed, 0xBA7C), epoch));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t at = 0; at < order.size(); at += batch_size) {
    const std::size_t end = std::min(order.size(), at + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

namespace {
constexpr char kCacheMagic[9] = "CVCDATA1";
constexpr std::uint32_t kCacheVersion = 1;
}  // namespace

void write_dataset_cache(const std::string& path, const Dataset& data) {
  io::BinaryWriter out(path);
  out.put_magic(kCacheMagic);
  out.put<std::uint32_t>(kCacheVersion);
  out.put<std::uint64_t>(data.samples.size());
  out.put<std::uint32_t>(static_cast<std::uint32_t>(data.spec.num_classes));
  out.put<std::uint32_t>(static_cast<std::uint32_t>(data.spec.image_size));
  out.put<std::uint32_t>(static_cast<std::uint32_t>(data.spec.image_size));
  out.put<std::uint32_t>(static_cast<std::uint32_t>(data.spec.in_channels));
  for (const auto& s : data.samples) {
    out.put<std::uint64_t>(s.index);
    out.put<std::int32_t>(s.label);
    out.put<double>(s.spacing);
    out.put_span<float>(s.x_long);
    out.put_span<float>(s.x_trans);
  }
  out.finish();
}

Dataset read_dataset_cache(const std::string& path) {
  io::BinaryReader in(path);
  in.expect_magic(kCacheMagic);
  if (const auto version = in.get<std::uint32_t>(); version != kCacheVersion) {
    throw io::IoError("unsupported dataset cache version " + std::to_string(version) + " in " + path);
  }
  Dataset data;
  const auto n = in.get<std::uint64_t>();
  data.spec.num_classes = in.get<std::uint32_t>();
  const auto h = in.get<std::uint32_t>();
  const auto w = in.get<std::uint32_t>();
  if (h != w) throw io::IoError("non-square images in " + path);
  data.spec.image_size = h;
  data.spec.in_channels = in.get<std::uint32_t>();
  data.spec.n = n;
  data.spec.class_weights.assign(data.spec.num_classes, 1.0);
  const std::size_t count = data.pixels_per_view();
  data.samples.resize(n);
  std::vector<double> seen(data.spec.num_classes, 0.0);
  for (auto& s : data.samples) {
    s.index = in.get<std::uint64_t>();
    s.label = in.get<std::int32_t>();
    s.spacing = in.get<double>();
    s.x_long = in.get_vector<float>(count);
    s.x_trans = in.get_vector<float>(count);
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= data.spec.num_classes) {
      throw io::IoError("label out of range in " + path);
    }
    seen[static_cast<std::size_t>(s.label)] += 1.0;
  }
  data.spec.class_weights = seen;
  return data;
}

}  // namespace cvcrf
