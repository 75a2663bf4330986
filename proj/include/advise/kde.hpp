#pragma once

// Adaptive-bandwidth Gaussian kernel density estimation on [0,1].
//
// Stage 1 picks a global fixed bandwidth by minimising the localised
// least-squares cost over the whole interval. Stage 2 repeats the fit in a
// boxcar window around every grid point, with the window length tied to the
// bandwidth through the stiffness gamma (W = omega / gamma), and smooths the
// resulting bandwidth field with Nadaraya-Watson regression. Stage 3 picks
// gamma by minimising the variable-bandwidth cost.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "advise/common.hpp"

namespace advise::kde {

inline constexpr double kVarianceEpsilon = 1e-12;
inline constexpr double kSqrt2Pi = 2.50662827463100050242;
inline constexpr double kSqrt2 = std::numbers::sqrt2;
/// Beyond this many bandwidths exp(-d^2 / 2w^2) underflows to exactly 0.
inline constexpr double kExactReach = 39.0;
/// Kernel support used by the variable-bandwidth stage: e^-72, far below
/// double rounding of any sum it joins.
inline constexpr double kVariableReach = 12.0;

/// Normalised sample values a_1..a_n in [0,1].
class SampleSet {
 public:
  explicit SampleSet(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) throw ValidationError("sample set is empty");
    for (std::size_t i = 0; i < values_.size(); ++i)
      if (!std::isfinite(values_[i]) || values_[i] < 0.0 || values_[i] > 1.0)
        throw ValidationError("sample " + std::to_string(i) + " outside [0,1] or non-finite");
    sorted_ = values_;
    std::sort(sorted_.begin(), sorted_.end());
  }

  std::span<const double> values() const { return values_; }
  std::span<const double> sorted() const { return sorted_; }
  std::size_t size() const { return values_.size(); }
  double min() const { return sorted_.front(); }
  double max() const { return sorted_.back(); }
  double range() const { return sorted_.back() - sorted_.front(); }

 private:
  std::vector<double> values_;
  std::vector<double> sorted_;
};

struct Bracket {
  double lo;
  double hi;
};

struct KdeConfig {
  int grid_size = 512;
  bool gamma_search = true;
  double gamma_fixed = 1.0;
  double gamma_lo = 0.05;
  double gamma_hi = 1.0;
  double gamma_tolerance = 1e-2;
  double bandwidth_lo = 0.0;  // 0 selects one grid spacing
  double bandwidth_hi = 0.5;
  int bandwidth_candidates = 48;
  int window_candidates = 64;

  double grid_spacing() const { return 1.0 / static_cast<double>(grid_size - 1); }
  Bracket bandwidth_bracket() const { return {bandwidth_lo > 0.0 ? bandwidth_lo : grid_spacing(), bandwidth_hi}; }
  /// Window lengths are clamped to [4 grid cells, 1].
  Bracket window_bounds() const { return {4.0 * grid_spacing(), 1.0}; }

  std::string gamma_mode() const { return gamma_search ? std::string("search") : "fixed:" + format_real(gamma_fixed); }

  void set_gamma_mode(std::string_view mode) {
    if (mode == "search") {
      gamma_search = true;
      return;
    }
    if (mode.starts_with("fixed:")) {
      const std::string value(mode.substr(6));
      char* end = nullptr;
      const double g = std::strtod(value.c_str(), &end);
      if (value.empty() || end != value.c_str() + value.size() || !(g > 0.0))
        throw ValidationError("invalid gamma mode '" + std::string(mode) + "': expected fixed:<positive value>");
      gamma_search = false;
      gamma_fixed = g;
      return;
    }
    throw ValidationError("invalid gamma mode '" + std::string(mode) + "': expected search or fixed:<value>");
  }

  void validate() const {
    if (grid_size < 16) throw ValidationError("grid_size must be >= 16");
    if (!(gamma_lo > 0.0 && gamma_hi > gamma_lo)) throw ValidationError("gamma range must satisfy 0 < lo < hi");
    if (!gamma_search && !(gamma_fixed > 0.0)) throw ValidationError("fixed gamma must be positive");
    if (!(gamma_tolerance > 0.0)) throw ValidationError("gamma tolerance must be positive");
    const auto b = bandwidth_bracket();
    if (!(b.lo > 0.0 && b.hi > b.lo)) throw ValidationError("bandwidth bracket must satisfy 0 < lo < hi");
    if (bandwidth_candidates < 8) throw ValidationError("bandwidth_candidates must be >= 8");
    if (window_candidates < 2) throw ValidationError("window_candidates must be >= 2");
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    const auto b = bandwidth_bracket();
    j["grid_size"] = grid_size;
    j["gamma_mode"] = gamma_mode();
    j["gamma_range"] = {round_sig9(gamma_lo), round_sig9(gamma_hi)};
    j["gamma_tolerance"] = round_sig9(gamma_tolerance);
    j["bandwidth_bracket"] = {round_sig9(b.lo), round_sig9(b.hi)};
    j["bandwidth_candidates"] = bandwidth_candidates;
    j["window_candidates"] = window_candidates;
    return j;
  }
};

// ---------------------------------------------------------------------------
// Kernel and fixed-bandwidth primitives
// ---------------------------------------------------------------------------

namespace detail {

inline double gauss(double s, double w) { return std::exp(-0.5 * (s * s) / (w * w)) / (kSqrt2Pi * w); }

/// P(lo <= Z <= hi) for standard normal Z, without cancellation in the tails.
inline double normal_mass(double lo, double hi) {
  if (hi <= lo) return 0.0;
  constexpr double r = 1.0 / kSqrt2;
  if (lo >= 0.0) return 0.5 * (std::erfc(lo * r) - std::erfc(hi * r));
  if (hi <= 0.0) return 0.5 * (std::erfc(-hi * r) - std::erfc(-lo * r));
  return 1.0 - 0.5 * (std::erfc(-lo * r) + std::erfc(hi * r));
}

inline void require_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) throw ValidationError(std::string(what) + " must be positive and finite");
}

}  // namespace detail

/// Gaussian density with standard deviation `bandwidth`.
inline double gauss_kernel(double s, double bandwidth) {
  detail::require_positive(bandwidth, "bandwidth");
  return detail::gauss(s, bandwidth);
}

/// Fixed-bandwidth estimate (1/n) sum_i H_w(point - a_i).
inline double fixed_density(std::span<const double> samples, double bandwidth, double point) {
  if (samples.empty()) throw ValidationError("fixed_density: empty sample set");
  detail::require_positive(bandwidth, "bandwidth");
  double acc = 0.0;
  for (double a : samples) acc += detail::gauss(point - a, bandwidth);
  return acc / static_cast<double>(samples.size());
}

/// Same estimate at many points; `sorted` must be ascending. Kernels that
/// underflow to zero are skipped, so the result matches the direct sum.
inline std::vector<double> fixed_density_grid(std::span<const double> sorted, double bandwidth,
                                              std::span<const double> points) {
  if (sorted.empty()) throw ValidationError("fixed_density_grid: empty sample set");
  detail::require_positive(bandwidth, "bandwidth");
  std::vector<double> out(points.size());
  const double reach = kExactReach * bandwidth;
  const double inv_n = 1.0 / static_cast<double>(sorted.size());
  for (std::size_t j = 0; j < points.size(); ++j) {
    const double t = points[j];
    auto first = std::lower_bound(sorted.begin(), sorted.end(), t - reach);
    double acc = 0.0;
    for (auto it = first; it != sorted.end() && *it <= t + reach; ++it) acc += detail::gauss(t - *it, bandwidth);
    out[j] = acc * inv_n;
  }
  return out;
}

/// Boxcar weight rho_W(s) = 1/W on |s| <= W/2.
inline double boxcar_weight(double s, double window) { return std::abs(s) <= 0.5 * window ? 1.0 / window : 0.0; }

/// psi_{w,W}^a(a_i, a_j) = integral of H_w(u-a_i) H_w(u-a_j) rho_W(u-a) du.
/// The Gaussian product is H_{sqrt2 w}(a_i-a_j) times a normal density with
/// mean (a_i+a_j)/2 and deviation w/sqrt2, integrated over the window.
inline double psi(double ai, double aj, double bandwidth, double window, double center) {
  detail::require_positive(bandwidth, "bandwidth");
  detail::require_positive(window, "window");
  const double mid = 0.5 * (ai + aj);
  const double s = bandwidth / kSqrt2;
  const double lo = center - 0.5 * window;
  const double hi = center + 0.5 * window;
  return detail::gauss(ai - aj, kSqrt2 * bandwidth) * detail::normal_mass((lo - mid) / s, (hi - mid) / s) / window;
}

/// Localised least-squares cost of a fixed bandwidth in a boxcar window,
/// evaluated exactly over all sample pairs (O(n^2)).
inline double local_cost(std::span<const double> samples, double bandwidth, double window, double center) {
  const std::size_t n = samples.size();
  if (n < 2) throw DegenerateSamples("local_cost needs at least 2 samples");
  detail::require_positive(bandwidth, "bandwidth");
  detail::require_positive(window, "window");
  double psi_sum = 0.0;
  double cross = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    psi_sum += psi(samples[i], samples[i], bandwidth, window, center);
    const double wi = boxcar_weight(samples[i] - center, window);
    for (std::size_t j = i + 1; j < n; ++j) {
      psi_sum += 2.0 * psi(samples[i], samples[j], bandwidth, window, center);
      const double wj = boxcar_weight(samples[j] - center, window);
      if (wi > 0.0 || wj > 0.0) cross += detail::gauss(samples[i] - samples[j], bandwidth) * (wi + wj);
    }
  }
  const double nn = static_cast<double>(n) * static_cast<double>(n);
  return psi_sum / nn - 2.0 * cross / nn;
}

// ---------------------------------------------------------------------------
// One-dimensional minimisation
// ---------------------------------------------------------------------------

struct MinimumResult {
  double x = 0.0;
  double value = 0.0;
  int evaluations = 0;
};

/// Golden-section search for a minimum of f on [lo, hi]; stops once the
/// bracket is shorter than `tol`. Returns the best point evaluated.
template <class F>
MinimumResult golden_section_minimize(F&& f, double lo, double hi, double tol, int max_iter = 200) {
  constexpr double inv_phi = 0.61803398874989484820;  // (sqrt5 - 1) / 2
  double a = lo, b = hi;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  MinimumResult best{c, fc, 2};
  if (fd < best.value) best = {d, fd, 2};
  for (int it = 0; it < max_iter && (b - a) > tol; ++it) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
      ++best.evaluations;
      if (fc < best.value) best.x = c, best.value = fc;
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
      ++best.evaluations;
      if (fd < best.value) best.x = d, best.value = fd;
    }
  }
  return best;
}

struct BandwidthOptimum {
  double bandwidth = 0.0;
  double cost = 0.0;
};

/// Minimises cost(w) over a bandwidth bracket: a log-spaced scan locates the
/// best cell, golden-section refines inside it (in log w). The result is
/// never worse than any scanned point, bracket ends included.
template <class CostFn>
BandwidthOptimum minimize_bandwidth(CostFn&& cost, Bracket bracket, int scan_points = 48, double log_tol = 1e-4) {
  const double l0 = std::log(bracket.lo);
  const double step = (std::log(bracket.hi) - l0) / static_cast<double>(scan_points - 1);
  std::size_t best = 0;
  std::vector<double> scan(static_cast<std::size_t>(scan_points));
  for (int m = 0; m < scan_points; ++m) {
    const double w = m == scan_points - 1 ? bracket.hi : std::exp(l0 + step * m);
    scan[m] = cost(w);
    if (scan[m] < scan[best]) best = static_cast<std::size_t>(m);
  }
  const double ulo = l0 + step * static_cast<double>(best == 0 ? 0 : best - 1);
  const double uhi = std::min(std::log(bracket.hi), l0 + step * static_cast<double>(best + 1));
  auto refined = golden_section_minimize([&](double u) { return cost(std::exp(u)); }, ulo, uhi, log_tol);
  BandwidthOptimum out{best == static_cast<std::size_t>(scan_points - 1) ? bracket.hi : std::exp(l0 + step * best),
                       scan[best]};
  if (refined.value < out.cost) out = {std::exp(refined.x), refined.value};
  return out;
}

inline void require_spread(const SampleSet& samples) {
  if (samples.size() < 2) throw DegenerateSamples("density estimation needs at least 2 samples");
  if (samples.range() <= kVarianceEpsilon) throw DegenerateSamples("zero-variance sample set");
}

/// Bandwidth minimising the exact local_cost in the window centred at `center`.
inline BandwidthOptimum optimize_fixed_bandwidth(const SampleSet& samples, double window, double center,
                                                 Bracket bracket) {
  require_spread(samples);
  detail::require_positive(window, "window");
  return minimize_bandwidth([&](double w) { return local_cost(samples.sorted(), w, window, center); }, bracket);
}

// ---------------------------------------------------------------------------
// Tabulated local cost
// ---------------------------------------------------------------------------

/// Fast evaluator of local_cost for one sample set. For each of M
/// log-spaced candidate bandwidths it stores the running integral of the
/// squared fixed-bandwidth density (so the pairwise psi sum over any window
/// is a difference of two lookups) and prefix sums of the cross term
/// sum_{j != i} H_w(a_i - a_j) over the sorted samples. Costs at other
/// bandwidths are cubic-interpolated in log w.
class LocalCostTable {
 public:
  LocalCostTable(const SampleSet& samples, Bracket bracket, int candidates = 48)
      : sorted_(samples.sorted().begin(), samples.sorted().end()), bracket_(bracket) {
    require_spread(samples);
    if (candidates < 4) throw ValidationError("LocalCostTable needs at least 4 candidates");
    log_lo_ = std::log(bracket.lo);
    log_step_ = (std::log(bracket.hi) - log_lo_) / static_cast<double>(candidates - 1);
    levels_.reserve(static_cast<std::size_t>(candidates));
    for (int m = 0; m < candidates; ++m) levels_.push_back(build_level(std::exp(log_lo_ + log_step_ * m)));
  }

  std::size_t candidates() const { return levels_.size(); }
  double bandwidth(std::size_t m) const { return levels_[m].bandwidth; }
  Bracket bracket() const { return bracket_; }
  std::span<const double> sorted() const { return sorted_; }

  /// Cost of every candidate bandwidth for one window.
  void costs(double center, double window, std::span<double> out) const {
    const Window win = locate(center, window);
    for (std::size_t m = 0; m < levels_.size(); ++m) out[m] = level_cost(levels_[m], win);
  }

  /// Cost at an arbitrary bandwidth inside the bracket.
  double cost(double bandwidth, double window, double center) const {
    const Window win = locate(center, window);
    const double u = std::clamp((std::log(bandwidth) - log_lo_) / log_step_, 0.0,
                                static_cast<double>(levels_.size() - 1));
    const std::size_t m = stencil_start(u);
    const double values[4] = {level_cost(levels_[m], win), level_cost(levels_[m + 1], win),
                              level_cost(levels_[m + 2], win), level_cost(levels_[m + 3], win)};
    return lagrange4(values, u - static_cast<double>(m + 1));
  }

  /// Minimiser over the bracket: best candidate, then golden-section on the
  /// log-cubic interpolant within the neighbouring cells.
  BandwidthOptimum optimize(double window, double center, double log_tol = 1e-3) const {
    std::vector<double> c(levels_.size());
    costs(center, window, c);
    const std::size_t best = static_cast<std::size_t>(std::min_element(c.begin(), c.end()) - c.begin());
    const double last = static_cast<double>(levels_.size() - 1);
    auto interp = [&](double u) {
      const std::size_t m = stencil_start(u);
      return lagrange4(&c[m], u - static_cast<double>(m + 1));
    };
    const double ulo = best == 0 ? 0.0 : static_cast<double>(best) - 1.0;
    const double uhi = std::min(last, static_cast<double>(best) + 1.0);
    auto refined = golden_section_minimize(interp, ulo, uhi, log_tol / log_step_);
    if (refined.value < c[best])
      return {std::clamp(std::exp(log_lo_ + log_step_ * refined.x), bracket_.lo, bracket_.hi), refined.value};
    return {levels_[best].bandwidth, c[best]};
  }

 private:
  struct Level {
    double bandwidth = 0.0;
    double origin = 0.0;
    double step = 0.0;
    std::vector<double> sq;     // lambda^2 at nodes
    std::vector<double> dsq;    // d/dx lambda^2 at nodes
    std::vector<double> accum;  // integral of lambda^2 from the first node
    std::vector<double> cross;  // prefix sums over sorted samples of sum_{j!=i} H(a_i - a_j)
  };
  struct Window {
    double lo, hi, width;
    std::size_t first, last;  // sorted-sample index range inside the window
  };

  static constexpr double kReach = 12.0;  // kernel support in bandwidths (e^-72 relative)
  static constexpr double kNodesPerBandwidth = 8.0;

  Level build_level(double w) const {
    Level lv;
    lv.bandwidth = w;
    lv.step = w / kNodesPerBandwidth;
    const double reach = kReach * w;
    lv.origin = sorted_.front() - reach;
    const auto nodes = static_cast<std::size_t>(std::ceil((sorted_.back() + reach - lv.origin) / lv.step)) + 1;
    std::vector<double> lam(nodes, 0.0), dlam(nodes, 0.0);
    const double norm = 1.0 / (kSqrt2Pi * w);
    const double inv_w2 = 1.0 / (w * w);
    for (double a : sorted_) {
      const auto k0 = static_cast<std::size_t>(std::max(0.0, std::ceil((a - reach - lv.origin) / lv.step)));
      const auto k1 = std::min(nodes - 1, static_cast<std::size_t>(std::floor((a + reach - lv.origin) / lv.step)));
      // exp(-d^2/2w^2) along equally spaced nodes by a second-order recurrence.
      const double d0 = lv.origin + lv.step * static_cast<double>(k0) - a;
      double e = std::exp(-0.5 * d0 * d0 * inv_w2);
      double r = std::exp(-(2.0 * d0 * lv.step + lv.step * lv.step) * 0.5 * inv_w2);
      const double c = std::exp(-lv.step * lv.step * inv_w2);
      for (std::size_t k = k0; k <= k1; ++k) {
        const double d = lv.origin + lv.step * static_cast<double>(k) - a;
        lam[k] += e;
        dlam[k] -= d * inv_w2 * e;
        e *= r;
        r *= c;
      }
    }
    const double scale = norm / static_cast<double>(sorted_.size());
    lv.sq.resize(nodes);
    lv.dsq.resize(nodes);
    for (std::size_t k = 0; k < nodes; ++k) {
      lam[k] *= scale;
      dlam[k] *= scale;
      lv.sq[k] = lam[k] * lam[k];
      lv.dsq[k] = 2.0 * lam[k] * dlam[k];
    }
    // Hermite-corrected trapezoid: exact for cubics between nodes.
    lv.accum.assign(nodes, 0.0);
    const double h = lv.step;
    for (std::size_t k = 0; k + 1 < nodes; ++k)
      lv.accum[k + 1] = lv.accum[k] + 0.5 * h * (lv.sq[k] + lv.sq[k + 1]) + h * h / 12.0 * (lv.dsq[k] - lv.dsq[k + 1]);

    // sum_{j != i} H(a_i - a_j) = n * lambda(a_i) - H(0), lambda by Hermite interpolation.
    const double n = static_cast<double>(sorted_.size());
    lv.cross.assign(sorted_.size() + 1, 0.0);
    for (std::size_t i = 0; i < sorted_.size(); ++i) {
      const double x = (sorted_[i] - lv.origin) / h;
      const auto k = std::min(nodes - 2, static_cast<std::size_t>(x));
      const double t = x - static_cast<double>(k);
      const double t2 = t * t, t3 = t2 * t;
      const double value = (2 * t3 - 3 * t2 + 1) * lam[k] + (t3 - 2 * t2 + t) * h * dlam[k] +
                           (-2 * t3 + 3 * t2) * lam[k + 1] + (t3 - t2) * h * dlam[k + 1];
      lv.cross[i + 1] = lv.cross[i] + (n * value - norm);
    }
    return lv;
  }

  /// Integral of lambda^2 from the first node to x (Hermite cubic between nodes).
  static double accumulated(const Level& lv, double x) {
    const double pos = (x - lv.origin) / lv.step;
    if (pos <= 0.0) return 0.0;
    const std::size_t last = lv.accum.size() - 1;
    if (pos >= static_cast<double>(last)) return lv.accum[last];
    const auto k = static_cast<std::size_t>(pos);
    const double t = pos - static_cast<double>(k);
    const double t2 = t * t, t3 = t2 * t, t4 = t3 * t;
    const double h = lv.step;
    const double i00 = t - t3 + 0.5 * t4;
    const double i10 = 0.5 * t2 - 2.0 / 3.0 * t3 + 0.25 * t4;
    const double i01 = t3 - 0.5 * t4;
    const double i11 = -t3 / 3.0 + 0.25 * t4;
    return lv.accum[k] +
           h * (i00 * lv.sq[k] + i10 * h * lv.dsq[k] + i01 * lv.sq[k + 1] + i11 * h * lv.dsq[k + 1]);
  }

  Window locate(double center, double window) const {
    Window w{center - 0.5 * window, center + 0.5 * window, window, 0, 0};
    w.first = static_cast<std::size_t>(std::lower_bound(sorted_.begin(), sorted_.end(), w.lo) - sorted_.begin());
    w.last = static_cast<std::size_t>(std::upper_bound(sorted_.begin(), sorted_.end(), w.hi) - sorted_.begin());
    return w;
  }

  double level_cost(const Level& lv, const Window& win) const {
    const double n = static_cast<double>(sorted_.size());
    const double squared = (accumulated(lv, win.hi) - accumulated(lv, win.lo)) / win.width;
    const double cross = (lv.cross[win.last] - lv.cross[win.first]) / win.width;
    return squared - 2.0 * cross / (n * n);
  }

  std::size_t stencil_start(double u) const {
    const double maxm = static_cast<double>(levels_.size() - 4);
    return static_cast<std::size_t>(std::clamp(std::floor(u) - 1.0, 0.0, maxm));
  }

  /// Cubic through f[0..3] at nodes -1, 0, 1, 2, evaluated at t.
  static double lagrange4(const double* f, double t) {
    const double a = t + 1.0, b = t, c = t - 1.0, d = t - 2.0;
    return -b * c * d / 6.0 * f[0] + a * c * d / 2.0 * f[1] - a * b * d / 2.0 * f[2] + a * b * c / 6.0 * f[3];
  }

  std::vector<double> sorted_;
  Bracket bracket_;
  double log_lo_ = 0.0;
  double log_step_ = 0.0;
  std::vector<Level> levels_;
};

// ---------------------------------------------------------------------------
// Variable bandwidth
// ---------------------------------------------------------------------------

/// Bandwidth value attached to each evaluation point.
struct BandwidthField {
  std::vector<double> points;
  std::vector<double> bandwidths;
};

inline std::vector<double> uniform_grid(int grid_size) {
  std::vector<double> g(static_cast<std::size_t>(grid_size));
  const double h = 1.0 / static_cast<double>(grid_size - 1);
  for (int j = 0; j < grid_size; ++j) g[j] = j == grid_size - 1 ? 1.0 : h * j;
  return g;
}

/// Global bandwidth: the window spans the whole unit interval.
inline double global_bandwidth(const LocalCostTable& table) { return table.optimize(1.0, 0.5).bandwidth; }

/// Locally optimal bandwidth for every rung of a log-spaced window ladder at
/// every grid point. Independent of gamma, so one ladder serves the whole
/// stiffness search.
struct WindowLadder {
  std::vector<double> windows;               // ascending, ends at the window bounds
  std::vector<std::vector<double>> optimum;  // [grid point][rung]
};

inline WindowLadder window_ladder(const LocalCostTable& table, std::span<const double> grid, const KdeConfig& cfg) {
  const Bracket wb = cfg.window_bounds();
  const auto m = static_cast<std::size_t>(cfg.window_candidates);
  WindowLadder ladder;
  ladder.windows.resize(m);
  const double l0 = std::log(wb.lo), step = (std::log(wb.hi) - l0) / static_cast<double>(m - 1);
  for (std::size_t r = 0; r < m; ++r) ladder.windows[r] = r + 1 == m ? wb.hi : std::exp(l0 + step * static_cast<double>(r));
  ladder.optimum.assign(grid.size(), std::vector<double>(m));
  for (std::size_t j = 0; j < grid.size(); ++j)
    for (std::size_t r = 0; r < m; ++r) ladder.optimum[j][r] = table.optimize(ladder.windows[r], grid[j]).bandwidth;
  return ladder;
}

struct LocalBandwidths {
  BandwidthField field;         // locally optimal bandwidth per grid point
  std::vector<double> windows;  // window length attached to each point
  std::vector<char> interior;   // fixed point lies strictly inside the window bounds
  double global_bandwidth = 0.0;
};

/// Solves w = argmin cost(., W, t) with W = clamp(w / gamma) at every grid
/// point. The clamped map can have several fixed points and plain iteration
/// tends to cycle between them, so the largest-window one is taken: the
/// largest W with w_opt(W) / W >= gamma, located on the ladder and refined
/// by log-linear interpolation between the bracketing rungs. If the ratio
/// stays above gamma up to W = 1 the whole interval is used; if it never
/// reaches gamma the smallest window is.
inline LocalBandwidths local_bandwidths(const WindowLadder& ladder, std::span<const double> grid, double gamma,
                                        double global) {
  detail::require_positive(gamma, "gamma");
  const auto& W = ladder.windows;
  const std::size_t m = W.size();
  LocalBandwidths out;
  out.global_bandwidth = global;
  out.field.points.assign(grid.begin(), grid.end());
  out.field.bandwidths.resize(grid.size());
  out.windows.resize(grid.size());
  out.interior.assign(grid.size(), 0);
  const double lg = std::log(gamma);
  for (std::size_t j = 0; j < grid.size(); ++j) {
    const auto& opt = ladder.optimum[j];
    std::size_t r = m;
    while (r > 0 && opt[r - 1] < gamma * W[r - 1]) --r;
    if (r == m) {
      out.windows[j] = W[m - 1];
      out.field.bandwidths[j] = opt[m - 1];
    } else if (r == 0) {
      out.windows[j] = W[0];
      out.field.bandwidths[j] = opt[0];
    } else {
      // ratio(W[r-1]) >= gamma > ratio(W[r])
      const double q0 = std::log(opt[r - 1] / W[r - 1]), q1 = std::log(opt[r] / W[r]);
      const double t = std::clamp((q0 - lg) / (q0 - q1), 0.0, 1.0);
      const double window = std::exp((1.0 - t) * std::log(W[r - 1]) + t * std::log(W[r]));
      out.windows[j] = window;
      out.field.bandwidths[j] = gamma * window;
      out.interior[j] = 1;
    }
  }
  return out;
}

/// Convenience form: builds the cost table, ladder and global bandwidth for `samples`.
inline LocalBandwidths local_bandwidths(const SampleSet& samples, double gamma, int grid_size, KdeConfig cfg = {}) {
  cfg.grid_size = grid_size;
  cfg.validate();
  const LocalCostTable table(samples, cfg.bandwidth_bracket(), cfg.bandwidth_candidates);
  const auto grid = uniform_grid(grid_size);
  return local_bandwidths(window_ladder(table, grid, cfg), grid, gamma, global_bandwidth(table));
}

/// Nadaraya-Watson smoothing of a bandwidth field with boxcar windows
/// W_s = clamp(w_s / gamma, window_bounds) attached to each source point.
inline std::vector<double> smooth_bandwidths(const BandwidthField& raw, double gamma, Bracket window_bounds) {
  if (raw.points.empty() || raw.points.size() != raw.bandwidths.size())
    throw ValidationError("smooth_bandwidths: empty or mismatched bandwidth field");
  detail::require_positive(gamma, "gamma");
  const std::size_t g = raw.points.size();
  std::vector<double> windows(g);
  for (std::size_t s = 0; s < g; ++s) windows[s] = std::clamp(raw.bandwidths[s] / gamma, window_bounds.lo, window_bounds.hi);
  const auto [lo_it, hi_it] = std::minmax_element(raw.bandwidths.begin(), raw.bandwidths.end());
  const double lo = *lo_it, hi = *hi_it;
  std::vector<double> out(g);
  for (std::size_t t = 0; t < g; ++t) {
    double num = 0.0, den = 0.0;
    for (std::size_t s = 0; s < g; ++s) {
      const double rho = boxcar_weight(raw.points[t] - raw.points[s], windows[s]);
      num += rho * raw.bandwidths[s];
      den += rho;
    }
    if (!(den > 0.0)) throw NumericalError("smooth_bandwidths: zero total weight");
    out[t] = std::clamp(num / den, lo, hi);
  }
  return out;
}

inline std::vector<double> smooth_bandwidths(const BandwidthField& raw, double gamma) {
  const double spacing = raw.points.size() >= 2 ? raw.points[1] - raw.points[0] : 0.0;
  return smooth_bandwidths(raw, gamma, {std::max(4.0 * spacing, std::numeric_limits<double>::min()), 1.0});
}

/// Bandwidth at x by linear interpolation of the field (clamped at the ends).
inline double interpolate_bandwidth(const BandwidthField& field, double x) {
  const auto& p = field.points;
  if (x <= p.front()) return field.bandwidths.front();
  if (x >= p.back()) return field.bandwidths.back();
  const auto k = static_cast<std::size_t>(std::upper_bound(p.begin(), p.end(), x) - p.begin()) - 1;
  const double t = (x - p[k]) / (p[k + 1] - p[k]);
  return field.bandwidths[k] + t * (field.bandwidths[k + 1] - field.bandwidths[k]);
}

/// Variable-bandwidth estimate at each field point, using that point's bandwidth.
inline std::vector<double> variable_density(std::span<const double> sorted, const BandwidthField& field) {
  std::vector<double> out(field.points.size());
  const double inv_n = 1.0 / static_cast<double>(sorted.size());
  for (std::size_t j = 0; j < out.size(); ++j) {
    const double t = field.points[j];
    const double w = field.bandwidths[j];
    const double reach = kVariableReach * w;
    auto it = std::lower_bound(sorted.begin(), sorted.end(), t - reach);
    double acc = 0.0;
    for (; it != sorted.end() && *it <= t + reach; ++it) acc += detail::gauss(t - *it, w);
    out[j] = acc * inv_n;
  }
  return out;
}

inline double trapezoid(std::span<const double> x, std::span<const double> y) {
  double acc = 0.0;
  for (std::size_t k = 0; k + 1 < x.size(); ++k) acc += 0.5 * (x[k + 1] - x[k]) * (y[k] + y[k + 1]);
  return acc;
}

/// Cost of a variable-bandwidth field: integral of the squared estimate over
/// the field's span (trapezoid) minus (2/n^2) sum_{i != j} H_{w(a_i)}(a_i - a_j).
inline double variable_cost(std::span<const double> sorted, const BandwidthField& field,
                            std::span<const double> density) {
  std::vector<double> sq(density.size());
  for (std::size_t j = 0; j < sq.size(); ++j) sq[j] = density[j] * density[j];
  const double squared = trapezoid(field.points, sq);
  const std::size_t n = sorted.size();
  double cross = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = interpolate_bandwidth(field, sorted[i]);
    const double reach = kVariableReach * w;
    auto it = std::lower_bound(sorted.begin(), sorted.end(), sorted[i] - reach);
    for (auto k = static_cast<std::size_t>(it - sorted.begin()); k < n && sorted[k] <= sorted[i] + reach; ++k)
      if (k != i) cross += detail::gauss(sorted[i] - sorted[k], w);
  }
  const double nn = static_cast<double>(n) * static_cast<double>(n);
  return squared - 2.0 * cross / nn;
}

inline double variable_cost(const SampleSet& samples, const BandwidthField& field) {
  for (double w : field.bandwidths) detail::require_positive(w, "bandwidth");
  const auto density = variable_density(samples.sorted(), field);
  return variable_cost(samples.sorted(), field, density);
}

// ---------------------------------------------------------------------------
// Full estimate
// ---------------------------------------------------------------------------

struct DensityEstimate {
  std::vector<double> grid;
  std::vector<double> density;
  std::vector<double> bandwidths;      // smoothed bandwidth per grid point
  std::vector<double> raw_bandwidths;  // locally optimal bandwidth per grid point
  double gamma = 0.0;
  double global_bandwidth = 0.0;
  double cost = 0.0;
  int gamma_evaluations = 0;
  std::size_t clamped_points = 0;    // fixed point at a window bound

  bool operator==(const DensityEstimate&) const = default;
};

namespace detail {

inline DensityEstimate evaluate_gamma(const LocalCostTable& table, const WindowLadder& ladder,
                                      std::span<const double> grid, double gamma, double global, const KdeConfig& cfg) {
  const auto local = local_bandwidths(ladder, grid, gamma, global);
  DensityEstimate est;
  est.grid.assign(grid.begin(), grid.end());
  est.raw_bandwidths = local.field.bandwidths;
  est.bandwidths = smooth_bandwidths(local.field, gamma, cfg.window_bounds());
  const BandwidthField smoothed{est.grid, est.bandwidths};
  est.density = variable_density(table.sorted(), smoothed);
  est.cost = variable_cost(table.sorted(), smoothed, est.density);
  est.gamma = gamma;
  est.global_bandwidth = global;
  est.clamped_points = static_cast<std::size_t>(std::count(local.interior.begin(), local.interior.end(), 0));
  return est;
}

}  // namespace detail

/// Adaptive-bandwidth density of `samples` on a uniform grid over [0,1].
/// Throws DegenerateSamples when n < 2 or the samples have no spread.
inline DensityEstimate estimate_density(const SampleSet& samples, const KdeConfig& cfg = {}) {
  cfg.validate();
  require_spread(samples);
  const LocalCostTable table(samples, cfg.bandwidth_bracket(), cfg.bandwidth_candidates);
  const auto grid = uniform_grid(cfg.grid_size);
  const double global = global_bandwidth(table);
  const auto ladder = window_ladder(table, grid, cfg);

  if (!cfg.gamma_search) {
    auto est = detail::evaluate_gamma(table, ladder, grid, cfg.gamma_fixed, global, cfg);
    est.gamma_evaluations = 1;
    return est;
  }

  DensityEstimate best;
  bool have_best = false;
  int evaluations = 0;
  auto objective = [&](double gamma) {
    auto est = detail::evaluate_gamma(table, ladder, grid, gamma, global, cfg);
    ++evaluations;
    const double c = est.cost;
    if (!have_best || c < best.cost) {
      best = std::move(est);
      have_best = true;
    }
    return c;
  };
  golden_section_minimize(objective, cfg.gamma_lo, cfg.gamma_hi, cfg.gamma_tolerance);
  best.gamma_evaluations = evaluations;
  return best;
}

}  // namespace advise::kde
