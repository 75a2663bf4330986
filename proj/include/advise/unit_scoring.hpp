#pragma once

// Per-unit relevance scores: the number of prominent peaks in the adaptive
// density of a unit's (min-max normalised) gradient values.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "advise/common.hpp"
#include "advise/kde.hpp"
#include "advise/tensor_store.hpp"

namespace advise {

inline constexpr double kDefaultProminence = 0.05;

/// A unit's values scaled to [0,1], or nothing when the unit is constant.
struct NormalizedUnit {
  std::optional<kde::SampleSet> samples;
  double min = 0.0;
  double max = 0.0;

  bool degenerate() const { return !samples.has_value(); }
};

inline NormalizedUnit normalize_unit(std::span<const double> slice) {
  if (slice.empty()) throw ValidationError("normalize_unit: empty slice");
  for (std::size_t i = 0; i < slice.size(); ++i)
    if (!std::isfinite(slice[i])) throw ValidationError("normalize_unit: non-finite value at flat index " + std::to_string(i));
  const auto [lo_it, hi_it] = std::minmax_element(slice.begin(), slice.end());
  NormalizedUnit out;
  out.min = *lo_it;
  out.max = *hi_it;
  const double range = out.max - out.min;
  if (!(range > kde::kVarianceEpsilon)) return out;
  std::vector<double> v(slice.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = (slice[i] - out.min) / range;
  out.samples.emplace(std::move(v));
  return out;
}

/// Counts interior strict local maxima whose prominence is at least
/// `prominence` times the global maximum. Peaks closer than two cells to a
/// higher retained peak are dropped. End points are never peaks.
inline int find_peaks(std::span<const double> density, double prominence = kDefaultProminence) {
  const std::size_t n = density.size();
  if (n < 3) return 0;
  const double top = *std::max_element(density.begin(), density.end());
  if (!(top > 0.0)) return 0;
  const double floor = prominence * top;

  std::vector<std::size_t> kept;
  for (std::size_t j = 1; j + 1 < n; ++j) {
    const double h = density[j];
    if (!(h > density[j - 1] && h > density[j + 1])) continue;
    // Lowest point on each side before the signal rises above h.
    double left = h;
    for (std::size_t k = j; k-- > 0;) {
      if (density[k] > h) break;
      left = std::min(left, density[k]);
    }
    double right = h;
    for (std::size_t k = j + 1; k < n; ++k) {
      if (density[k] > h) break;
      right = std::min(right, density[k]);
    }
    if (h - std::max(left, right) >= floor) kept.push_back(j);
  }

  std::stable_sort(kept.begin(), kept.end(), [&](std::size_t a, std::size_t b) { return density[a] > density[b]; });
  std::vector<std::size_t> retained;
  for (std::size_t j : kept) {
    const bool crowded = std::any_of(retained.begin(), retained.end(), [&](std::size_t r) {
      return (j > r ? j - r : r - j) < 2;
    });
    if (!crowded) retained.push_back(j);
  }
  return static_cast<int>(retained.size());
}

inline int find_peaks(const kde::DensityEstimate& est, double prominence = kDefaultProminence) {
  return find_peaks(est.density, prominence);
}

enum class ScoreSource { gradient, activation };

inline std::string to_string(ScoreSource s) { return s == ScoreSource::gradient ? "gradient" : "activation"; }

inline ScoreSource parse_score_source(std::string_view s) {
  if (s == "gradient") return ScoreSource::gradient;
  if (s == "activation") return ScoreSource::activation;
  throw ValidationError("invalid score source '" + std::string(s) + "': expected gradient or activation");
}

struct ScoringConfig {
  kde::KdeConfig kde;
  double prominence = kDefaultProminence;
  ScoreSource source = ScoreSource::gradient;
  unsigned threads = 0;  // 0 = hardware concurrency
  bool keep_densities = false;

  void validate() const {
    kde.validate();
    if (!(prominence >= 0.0 && prominence < 1.0)) throw ValidationError("prominence must lie in [0, 1)");
  }
};

struct UnitScoreVector {
  std::vector<int> scores;
  std::vector<std::optional<kde::DensityEstimate>> densities;  // filled when keep_densities
  std::vector<std::pair<double, double>> normalization;        // per-unit (min, max)

  std::pair<int, int> peak_range() const {
    if (scores.empty()) return {0, 0};
    const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
    return {*lo, *hi};
  }

  std::map<int, std::size_t> histogram() const {
    std::map<int, std::size_t> h;
    for (int s : scores) ++h[s];
    return h;
  }
};

namespace detail {

template <class E>
[[noreturn]] void rethrow_with_unit(const E& e, std::size_t k) {
  throw E("unit " + std::to_string(k) + ": " + e.what());
}

}  // namespace detail

/// Scores every unit of the bundle's gradient (or activation) tensor.
/// Units are processed in parallel; results land in unit order.
inline UnitScoreVector score_units(const TensorBundle& bundle, const ScoringConfig& cfg = {}) {
  cfg.validate();
  validate_bundle(bundle);
  const Tensor3& t = cfg.source == ScoreSource::gradient ? bundle.gradient : bundle.activation;
  const std::size_t K = t.units;
  UnitScoreVector out;
  out.scores.assign(K, 0);
  out.densities.resize(K);
  out.normalization.resize(K);
  parallel_for(K, cfg.threads, [&](std::size_t k) {
    try {
      const auto slice = t.unit_slice(k);
      const auto unit = normalize_unit(slice);
      out.normalization[k] = {unit.min, unit.max};
      if (unit.degenerate()) return;
      try {
        auto est = kde::estimate_density(*unit.samples, cfg.kde);
        out.scores[k] = find_peaks(est, cfg.prominence);
        if (cfg.keep_densities) out.densities[k] = std::move(est);
      } catch (const DegenerateSamples&) {
        out.scores[k] = 0;
      }
    } catch (const ValidationError& e) {
      detail::rethrow_with_unit(e, k);
    } catch (const NumericalError& e) {
      detail::rethrow_with_unit(e, k);
    }
  });
  return out;
}

inline nlohmann::ordered_json scores_to_json(const std::string& bundle, const ScoringConfig& cfg,
                                             const UnitScoreVector& s) {
  nlohmann::ordered_json j;
  j["bundle"] = bundle;
  j["score_source"] = to_string(cfg.source);
  j["scores"] = s.scores;
  const auto [lo, hi] = s.peak_range();
  j["peak_range"] = {lo, hi};
  nlohmann::ordered_json hist = nlohmann::ordered_json::object();
  for (const auto& [score, count] : s.histogram()) hist[std::to_string(score)] = count;
  j["histogram"] = std::move(hist);
  auto kc = cfg.kde.to_json();
  kc["prominence"] = round_sig9(cfg.prominence);
  j["kde_config"] = std::move(kc);
  return j;
}

/// Reads the "scores" array back from a scores.json document.
inline std::vector<int> scores_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("scores") || !j["scores"].is_array())
    throw ValidationError("scores document lacks a \"scores\" array");
  std::vector<int> out;
  for (const auto& v : j["scores"]) {
    if (!v.is_number_integer() || v.get<long long>() < 0) throw ValidationError("scores must be non-negative integers");
    out.push_back(v.get<int>());
  }
  return out;
}

}  // namespace advise
