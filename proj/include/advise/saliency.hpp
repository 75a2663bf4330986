#pragma once

// Score-grouped saliency maps and the Grad-CAM comparator.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advise/common.hpp"
#include "advise/tensor_store.hpp"
#include "advise/unit_scoring.hpp"

namespace advise {

/// Units per score value, ascending by score; indices are 0-based. Empty
/// score values are simply absent.
inline std::map<int, std::vector<std::size_t>> group_units(std::span<const int> scores) {
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    if (scores[k] < 0) throw ValidationError("score of unit " + std::to_string(k) + " is negative");
    groups[scores[k]].push_back(k);
  }
  return groups;
}

/// Mean gradient of unit k over the spatial grid.
inline double unit_weight(const Tensor3& gradient, std::size_t k) {
  const std::size_t n = gradient.rows * gradient.cols;
  double acc = 0.0;
  for (std::size_t p = 0; p < n; ++p) acc += gradient.data[p * gradient.units + k];
  return acc / static_cast<double>(n);
}

/// sum_j mean(g_j) * A_j over the selected units, optionally rectified.
inline Map2 group_map(const TensorBundle& bundle, std::span<const std::size_t> units, bool apply_relu) {
  if (units.empty()) throw ValidationError("group_map: no units selected");
  const Tensor3& A = bundle.activation;
  Map2 out(A.rows, A.cols);
  for (std::size_t k : units) {
    if (k >= A.units)
      throw ValidationError("group_map: unit index " + std::to_string(k) + " out of range [0, " +
                            std::to_string(A.units) + ")");
    const double w = unit_weight(bundle.gradient, k);
    for (std::size_t p = 0; p < out.data.size(); ++p) out.data[p] += w * A.data[p * A.units + k];
  }
  if (apply_relu)
    for (double& v : out.data) v = std::max(v, 0.0);
  return out;
}

namespace detail {

/// Catmull-Rom kernel (a = -0.5).
inline double cubic_weight(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

/// Taps and weights for one output coordinate; pixel centres are aligned
/// (src = (dst + 0.5) * in / out - 0.5) and indices clamp at the edges.
struct Taps {
  std::array<std::size_t, 4> index;
  std::array<double, 4> weight;
};

inline std::vector<Taps> cubic_taps(std::size_t in, std::size_t out) {
  std::vector<Taps> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  const auto last = static_cast<std::ptrdiff_t>(in) - 1;
  for (std::size_t d = 0; d < out; ++d) {
    const double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
    const double base = std::floor(src);
    const double t = src - base;
    for (int m = 0; m < 4; ++m) {
      const auto i = static_cast<std::ptrdiff_t>(base) + m - 1;
      taps[d].index[m] = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, last));
      taps[d].weight[m] = cubic_weight(t - static_cast<double>(m - 1));
    }
  }
  return taps;
}

}  // namespace detail

/// Separable Catmull-Rom resampling to [height, width].
inline Map2 resize_bicubic(const Map2& map, std::size_t height, std::size_t width) {
  if (map.rows == 0 || map.cols == 0) throw ValidationError("resize_bicubic: empty input map");
  if (height == 0 || width == 0) throw ValidationError("resize_bicubic: target dimension is 0");
  if (map.rows == height && map.cols == width) return map;
  const auto ty = detail::cubic_taps(map.rows, height);
  const auto tx = detail::cubic_taps(map.cols, width);
  Map2 tmp(map.rows, width);
  for (std::size_t r = 0; r < map.rows; ++r)
    for (std::size_t x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int m = 0; m < 4; ++m) acc += tx[x].weight[m] * map(r, tx[x].index[m]);
      tmp(r, x) = acc;
    }
  Map2 out(height, width);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int m = 0; m < 4; ++m) acc += ty[y].weight[m] * tmp(ty[y].index[m], x);
      out(y, x) = acc;
    }
  return out;
}

/// Min-max scaling to [0,1]. A flat map becomes all ones if it is positive
/// (uniform saliency keeps the whole image) and all zeros otherwise.
inline Map2 normalize_map(const Map2& map) {
  if (map.data.empty()) throw ValidationError("normalize_map: empty map");
  const auto [lo_it, hi_it] = std::minmax_element(map.data.begin(), map.data.end());
  const double lo = *lo_it, hi = *hi_it;
  Map2 out(map.rows, map.cols);
  const double range = hi - lo;
  if (!(range > 1e-12 * std::max(1.0, std::abs(hi)))) {
    std::fill(out.data.begin(), out.data.end(), hi > 0.0 ? 1.0 : 0.0);
    return out;
  }
  for (std::size_t p = 0; p < out.data.size(); ++p) out.data[p] = std::clamp((map.data[p] - lo) / range, 0.0, 1.0);
  return out;
}

/// One rendered map: the coarse [U,V] map, its resize to the input size,
/// and the [0,1] normalised form used for masking.
struct SaliencyMap {
  int score = 0;
  std::vector<std::size_t> units;
  Map2 coarse;
  Map2 raw;
  Map2 normalized;
};

inline SaliencyMap render_map(const TensorBundle& bundle, std::vector<std::size_t> units, int score, bool apply_relu) {
  SaliencyMap m;
  m.score = score;
  m.coarse = group_map(bundle, units, apply_relu);
  m.units = std::move(units);
  const auto [H, W] = bundle.manifest.input_size;
  m.raw = resize_bicubic(m.coarse, static_cast<std::size_t>(H), static_cast<std::size_t>(W));
  if (apply_relu)
    for (double& v : m.raw.data) v = std::max(v, 0.0);
  m.normalized = normalize_map(m.raw);
  return m;
}

struct SaliencyMapSet {
  std::vector<SaliencyMap> maps;  // ascending score
  bool relu_applied = true;
  std::optional<int> selected;    // score of the headline map, set by evaluation

  std::vector<std::size_t> group_sizes() const {
    std::vector<std::size_t> out;
    for (const auto& m : maps) out.push_back(m.units.size());
    return out;
  }
  const SaliencyMap* find(int score) const {
    for (const auto& m : maps)
      if (m.score == score) return &m;
    return nullptr;
  }
};

inline SaliencyMapSet build_advise_maps(const TensorBundle& bundle, std::span<const int> scores, bool apply_relu,
                                        unsigned threads = 1) {
  validate_bundle(bundle);
  if (scores.size() != bundle.units())
    throw ValidationError("score vector has " + std::to_string(scores.size()) + " entries, bundle has " +
                          std::to_string(bundle.units()) + " units");
  auto groups = group_units(scores);
  SaliencyMapSet set;
  set.relu_applied = apply_relu;
  set.maps.resize(groups.size());
  std::vector<std::pair<int, std::vector<std::size_t>>> items(groups.begin(), groups.end());
  parallel_for(items.size(), threads, [&](std::size_t i) {
    set.maps[i] = render_map(bundle, std::move(items[i].second), items[i].first, apply_relu);
  });
  return set;
}

inline SaliencyMapSet build_advise_maps(const TensorBundle& bundle, const UnitScoreVector& scores, bool apply_relu,
                                        unsigned threads = 1) {
  return build_advise_maps(bundle, std::span<const int>(scores.scores), apply_relu, threads);
}

/// Grad-CAM over all units: the single-group case of the ADVISE map.
inline SaliencyMap gradcam_map(const TensorBundle& bundle) {
  validate_bundle(bundle);
  std::vector<std::size_t> all(bundle.units());
  for (std::size_t k = 0; k < all.size(); ++k) all[k] = k;
  return render_map(bundle, std::move(all), 0, true);
}

/// Per-channel Hadamard product of an image with a [0,1] map.
inline Image mask_image(const Image& image, const Map2& map) {
  if (map.rows != image.height || map.cols != image.width)
    throw ValidationError("mask_image: map is " + std::to_string(map.rows) + "x" + std::to_string(map.cols) +
                          ", image is " + std::to_string(image.height) + "x" + std::to_string(image.width));
  Image out(image.height, image.width);
  for (std::size_t p = 0; p < map.data.size(); ++p) {
    const double m = map.data[p];
    if (!(m >= 0.0 && m <= 1.0)) throw ValidationError("mask_image: mask value outside [0,1]");
    for (std::size_t c = 0; c < 3; ++c) out.data[p * 3 + c] = image.data[p * 3 + c] * m;
  }
  return out;
}

}  // namespace advise
