#pragma once

// Explanation quality metrics: class sensitivity, hit, average drop, global
// SSIM, FSIM, MSE and their penalised harmonic mean (AVX).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>

#include "json.hpp"

#include "advise/common.hpp"
#include "advise/fsim.hpp"

namespace advise {

/// Pearson correlation of two equally sized maps; nullopt if either is flat.
inline std::optional<double> class_sensitivity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw ValidationError("class_sensitivity: maps differ in size or are empty");
  const auto n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
  ma /= n;
  mb /= n;
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    saa += da * da;
    sbb += db * db;
    sab += da * db;
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) return std::nullopt;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

inline int hit(int top1, const std::array<int, 5>& masked_top5) {
  return std::find(masked_top5.begin(), masked_top5.end(), top1) != masked_top5.end() ? 1 : 0;
}

inline double average_drop(double y_c, double o_c) {
  if (!(y_c > 0.0 && y_c <= 1.0)) throw ValidationError("average_drop: y_c must lie in (0,1]");
  if (!(o_c >= 0.0 && o_c <= 1.0)) throw ValidationError("average_drop: o_c must lie in [0,1]");
  return std::max(0.0, y_c - o_c) / y_c;
}

namespace detail {

inline void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (a.height != b.height || a.width != b.width)
    throw ValidationError(std::string(what) + ": image shapes differ");
  if (a.data.empty()) throw ValidationError(std::string(what) + ": empty image");
}

}  // namespace detail

/// SSIM with image-wide statistics of the luma channel (L = 255). Can drop
/// below 0 for anti-correlated images.
inline double ssim_global(const Image& a, const Image& b) {
  detail::require_same_shape(a, b, "ssim_global");
  constexpr double e1 = (0.01 * 255.0) * (0.01 * 255.0);
  constexpr double e2 = (0.03 * 255.0) * (0.03 * 255.0);
  const auto x = luma255(a);
  const auto y = luma255(b);
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
  mx /= n;
  my /= n;
  double vx = 0.0, vy = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    vx += dx * dx;
    vy += dy * dy;
    cov += dx * dy;
  }
  vx /= n;
  vy /= n;
  cov /= n;
  return ((2.0 * (mx * my) + e1) * (2.0 * cov + e2)) / ((mx * mx + my * my + e1) * (vx + vy + e2));
}

/// Mean squared difference over pixels and channels, on the [0,1] scale.
inline double mse(const Image& a, const Image& b) {
  detail::require_same_shape(a, b, "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.data.size());
}

enum class PenaltyBranch { none, delta, zeroed };

inline std::string to_string(PenaltyBranch b) {
  switch (b) {
    case PenaltyBranch::none: return "none";
    case PenaltyBranch::delta: return "delta";
    case PenaltyBranch::zeroed: return "zeroed";
  }
  return "none";
}

/// Why CS is (un)available: measured, flat map (no variance), or no map
/// for the second class.
enum class CsState { defined, flat, missing };

inline std::string to_string(CsState s) {
  switch (s) {
    case CsState::defined: return "defined";
    case CsState::flat: return "flat";
    case CsState::missing: return "missing";
  }
  return "defined";
}

struct CsValue {
  CsState state = CsState::missing;
  double value = 0.0;  // meaningful when state == defined

  static CsValue of(std::optional<double> v) { return v ? CsValue{CsState::defined, *v} : CsValue{CsState::flat, 0.0}; }
  static CsValue missing() { return {CsState::missing, 0.0}; }
};

struct Components {
  double ad = 0.0;
  double ssim = 1.0;
  double fsim = 1.0;
  double mse = 0.0;
};

struct AvxResult {
  double avx = 0.0;
  PenaltyBranch branch = PenaltyBranch::none;
  double delta = 1.0;    // penalty factor actually applied
  Components effective;  // components after the penalty
};

/// Harmonic mean of (1 - AD, SSIM, FSIM, 1 - MSE); 0 if any term is <= 0.
inline double harmonic_avx(const Components& c) {
  const std::array<double, 4> t{1.0 - c.ad, c.ssim, c.fsim, 1.0 - c.mse};
  double inv = 0.0;
  for (double v : t) {
    if (!(v > 0.0)) return 0.0;
    inv += 1.0 / v;
  }
  return std::clamp(4.0 / inv, 0.0, 1.0);
}

/// Penalised AVX. hit = 1 uses the components as measured. hit = 0 scales
/// every component by 1 - |y_c - o_c| when the class maps are weakly
/// correlated (|CS| <= 0.5, or CS undefined because a map is flat), and
/// zeroes the score otherwise (including when no second-class map exists).
inline AvxResult avx(const Components& m, int hit_value, CsValue cs, double y_c, double o_c) {
  auto check = [](double v, double lo, double hi, const char* name) {
    if (!(v >= lo && v <= hi))
      throw ValidationError(std::string("avx: ") + name + " = " + format_real(v) + " outside [" + format_real(lo) +
                            ", " + format_real(hi) + "]");
  };
  check(m.ad, 0.0, 1.0, "AD");
  check(m.ssim, -1.0, 1.0, "SSIM");
  check(m.fsim, 0.0, 1.0, "FSIM");
  check(m.mse, 0.0, 1.0, "MSE");
  check(y_c, 0.0, 1.0, "y_c");
  check(o_c, 0.0, 1.0, "o_c");
  if (hit_value != 0 && hit_value != 1) throw ValidationError("avx: hit must be 0 or 1");
  if (cs.state == CsState::defined) check(cs.value, -1.0, 1.0, "CS");

  AvxResult r;
  if (hit_value == 1) {
    r.effective = m;
    r.avx = harmonic_avx(m);
    return r;
  }
  const bool weak = cs.state == CsState::flat || (cs.state == CsState::defined && std::abs(cs.value) <= 0.5);
  if (weak) {
    r.branch = PenaltyBranch::delta;
    r.delta = 1.0 - std::abs(y_c - o_c);
    r.effective = {m.ad * r.delta, m.ssim * r.delta, m.fsim * r.delta, m.mse * r.delta};
    r.avx = harmonic_avx(r.effective);
    return r;
  }
  r.branch = PenaltyBranch::zeroed;
  r.delta = 0.0;
  r.effective = {1.0, 0.0, 0.0, 1.0};
  r.avx = 0.0;
  return r;
}

/// One evaluated explanation map.
struct MetricRecord {
  std::string map_id;
  std::string method = "advise";  // advise | gradcam | identity
  std::optional<int> score;       // score group, advise maps only
  CsValue cs;
  int hit = 0;
  double y_c = 0.0;
  double o_c = 0.0;
  Components measured;
  AvxResult result;
  double seconds = 0.0;  // wall clock, only reported on request

  nlohmann::ordered_json to_json(bool with_timing = false) const {
    nlohmann::ordered_json j;
    j["map"] = map_id;
    j["method"] = method;
    j["score"] = score ? nlohmann::ordered_json(*score) : nlohmann::ordered_json(nullptr);
    if (cs.state == CsState::defined)
      j["cs"] = round_sig9(cs.value);
    else
      j["cs"] = nullptr;
    j["cs_state"] = to_string(cs.state);
    j["hit"] = hit;
    j["ad"] = round_sig9(result.effective.ad);
    j["ssim"] = round_sig9(result.effective.ssim);
    j["fsim"] = round_sig9(result.effective.fsim);
    j["mse"] = round_sig9(result.effective.mse);
    j["avx"] = round_sig9(result.avx);
    j["penalty_branch"] = to_string(result.branch);
    j["penalty_delta"] = round_sig9(result.delta);
    j["y_c"] = round_sig9(y_c);
    j["o_c"] = round_sig9(o_c);
    j["measured"] = {{"ad", round_sig9(measured.ad)},
                     {"ssim", round_sig9(measured.ssim)},
                     {"fsim", round_sig9(measured.fsim)},
                     {"mse", round_sig9(measured.mse)}};
    if (with_timing) j["seconds"] = round_sig9(seconds);
    return j;
  }
};

/// Computes every metric for one (original, masked) pair given the model's
/// answers. `top1` is the unmasked prediction, `masked_top5` the masked one.
inline MetricRecord score_explanation(const Image& original, const Image& masked, int top1,
                                      const std::array<int, 5>& masked_top5, double y_c, double o_c, CsValue cs) {
  MetricRecord r;
  r.cs = cs;
  r.hit = hit(top1, masked_top5);
  r.y_c = y_c;
  r.o_c = o_c;
  r.measured.ad = average_drop(y_c, o_c);
  r.measured.ssim = ssim_global(original, masked);
  r.measured.fsim = fsim(original, masked);
  r.measured.mse = mse(original, masked);
  r.result = avx(r.measured, r.hit, cs, y_c, o_c);
  return r;
}

}  // namespace advise
