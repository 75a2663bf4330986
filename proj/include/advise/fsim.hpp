#pragma once

// Feature similarity (FSIM) on luma, after Zhang et al. (2011): phase
// congruency from a log-Gabor bank plus Scharr gradient magnitude, combined
// and weighted by the larger phase congruency of the two images.

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <mutex>
#include <numbers>
#include <vector>

#include "advise/common.hpp"

namespace advise {

struct FsimParams {
  int scales = 4;
  int orientations = 4;
  double min_wavelength = 6.0;
  double mult = 2.0;
  double sigma_onf = 0.55;
  double dtheta_on_sigma = 1.2;
  double noise_k = 2.0;
  double epsilon = 1e-4;
  double lowpass_cutoff = 0.45;
  int lowpass_order = 15;
  double t1 = 0.85;
  double t2 = 160.0;
};

namespace detail {

/// FFTW's planner is not re-entrant; execution on distinct arrays is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

/// In-place 2-D complex transform of a rows x cols buffer.
class Fft2 {
 public:
  Fft2(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols) {
    buf_ = fftw_alloc_complex(rows * cols);
    if (!buf_) throw NumericalError("fftw allocation failed");
    std::lock_guard lock(fftw_planner_mutex());
    const int r = static_cast<int>(rows), c = static_cast<int>(cols);
    fwd_ = fftw_plan_dft_2d(r, c, buf_, buf_, FFTW_FORWARD, FFTW_ESTIMATE);
    inv_ = fftw_plan_dft_2d(r, c, buf_, buf_, FFTW_BACKWARD, FFTW_ESTIMATE);
    if (!fwd_ || !inv_) throw NumericalError("fftw planning failed");
  }
  ~Fft2() {
    std::lock_guard lock(fftw_planner_mutex());
    if (fwd_) fftw_destroy_plan(fwd_);
    if (inv_) fftw_destroy_plan(inv_);
    fftw_free(buf_);
  }
  Fft2(const Fft2&) = delete;
  Fft2& operator=(const Fft2&) = delete;

  std::complex<double>* data() { return reinterpret_cast<std::complex<double>*>(buf_); }
  void forward() { fftw_execute(fwd_); }
  /// Unnormalised inverse; divide by rows*cols for the true inverse.
  void inverse() { fftw_execute(inv_); }
  std::size_t size() const { return rows_ * cols_; }

 private:
  std::size_t rows_, cols_;
  fftw_complex* buf_ = nullptr;
  fftw_plan fwd_ = nullptr;
  fftw_plan inv_ = nullptr;
};

/// Frequency coordinates in [-0.5, 0.5) laid out in FFT order (already
/// inverse-shifted), matching the usual meshgrid + ifftshift construction.
inline std::vector<double> freq_axis(std::size_t n) {
  std::vector<double> centred(n);
  const auto m = static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double k = static_cast<double>(i);
    centred[i] = n % 2 ? (k - (m - 1.0) / 2.0) / (m - 1.0) : (k - m / 2.0) / m;
  }
  std::vector<double> out(n);
  const std::size_t shift = n / 2;  // ifftshift moves index shift to 0
  for (std::size_t i = 0; i < n; ++i) out[i] = centred[(i + shift) % n];
  return out;
}

inline double median(std::vector<double> v) {
  const std::size_t n = v.size();
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n / 2), v.end());
  const double hi = v[n / 2];
  if (n % 2) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n / 2));
  return 0.5 * (lo + hi);
}

}  // namespace detail

/// Phase congruency of a single-channel image (row-major rows x cols).
inline std::vector<double> phase_congruency(const std::vector<double>& img, std::size_t rows, std::size_t cols,
                                            const FsimParams& p = {}) {
  const std::size_t n = rows * cols;
  const auto fy = detail::freq_axis(rows);
  const auto fx = detail::freq_axis(cols);
  std::vector<double> radius(n), sin_t(n), cos_t(n), lowpass(n);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      const double x = fx[c], y = fy[r];
      const double rad = std::sqrt(x * x + y * y);
      const double th = std::atan2(-y, x);
      lowpass[i] = 1.0 / (1.0 + std::pow(rad / p.lowpass_cutoff, 2 * p.lowpass_order));
      radius[i] = i == 0 ? 1.0 : rad;
      sin_t[i] = std::sin(th);
      cos_t[i] = std::cos(th);
    }

  const auto S = static_cast<std::size_t>(p.scales);
  const double log_sig2 = 2.0 * std::log(p.sigma_onf) * std::log(p.sigma_onf);
  std::vector<std::vector<double>> log_gabor(S, std::vector<double>(n));
  for (std::size_t s = 0; s < S; ++s) {
    const double fo = 1.0 / (p.min_wavelength * std::pow(p.mult, static_cast<double>(s)));
    for (std::size_t i = 0; i < n; ++i) {
      const double l = std::log(radius[i] / fo);
      log_gabor[s][i] = std::exp(-(l * l) / log_sig2) * lowpass[i];
    }
    log_gabor[s][0] = 0.0;
  }

  detail::Fft2 fft(rows, cols);
  auto* buf = fft.data();
  for (std::size_t i = 0; i < n; ++i) buf[i] = img[i];
  fft.forward();
  const std::vector<std::complex<double>> spectrum(buf, buf + n);

  const double theta_sigma = std::numbers::pi / p.orientations / p.dtheta_on_sigma;
  const double inv_n = 1.0 / static_cast<double>(n);
  const double sqrt_n = std::sqrt(static_cast<double>(n));
  std::vector<double> energy_all(n, 0.0), an_all(n, 0.0);
  std::vector<double> filter(n), spread(n);
  std::vector<std::vector<std::complex<double>>> eo(S, std::vector<std::complex<double>>(n));
  std::vector<std::vector<double>> ifft_filter(S, std::vector<double>(n));
  std::vector<double> sum_e(n), sum_o(n), sum_an(n), energy(n);

  for (int o = 0; o < p.orientations; ++o) {
    const double angle = o * std::numbers::pi / p.orientations;
    const double ca = std::cos(angle), sa = std::sin(angle);
    for (std::size_t i = 0; i < n; ++i) {
      const double ds = sin_t[i] * ca - cos_t[i] * sa;
      const double dc = cos_t[i] * ca + sin_t[i] * sa;
      const double dtheta = std::abs(std::atan2(ds, dc));
      spread[i] = std::exp(-(dtheta * dtheta) / (2.0 * theta_sigma * theta_sigma));
    }
    std::fill(sum_e.begin(), sum_e.end(), 0.0);
    std::fill(sum_o.begin(), sum_o.end(), 0.0);
    std::fill(sum_an.begin(), sum_an.end(), 0.0);
    std::fill(energy.begin(), energy.end(), 0.0);
    double em_n = 0.0;
    for (std::size_t s = 0; s < S; ++s) {
      for (std::size_t i = 0; i < n; ++i) filter[i] = log_gabor[s][i] * spread[i];
      // Spatial-domain filter, scaled as real(ifft2(filter)) * sqrt(n).
      for (std::size_t i = 0; i < n; ++i) buf[i] = filter[i];
      fft.inverse();
      for (std::size_t i = 0; i < n; ++i) ifft_filter[s][i] = buf[i].real() * inv_n * sqrt_n;
      for (std::size_t i = 0; i < n; ++i) buf[i] = spectrum[i] * filter[i];
      fft.inverse();
      for (std::size_t i = 0; i < n; ++i) {
        eo[s][i] = buf[i] * inv_n;
        sum_an[i] += std::abs(eo[s][i]);
        sum_e[i] += eo[s][i].real();
        sum_o[i] += eo[s][i].imag();
      }
      if (s == 0)
        for (std::size_t i = 0; i < n; ++i) em_n += filter[i] * filter[i];
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double x_energy = std::sqrt(sum_e[i] * sum_e[i] + sum_o[i] * sum_o[i]) + p.epsilon;
      const double mean_e = sum_e[i] / x_energy, mean_o = sum_o[i] / x_energy;
      for (std::size_t s = 0; s < S; ++s) {
        const double e = eo[s][i].real(), od = eo[s][i].imag();
        energy[i] += e * mean_e + od * mean_o - std::abs(e * mean_o - od * mean_e);
      }
    }

    // Noise threshold from the smallest scale's response (Rayleigh model).
    std::vector<double> e2(n);
    for (std::size_t i = 0; i < n; ++i) e2[i] = std::norm(eo[0][i]);
    const double mean_e2n = -detail::median(std::move(e2)) / std::log(0.5);
    const double noise_power = mean_e2n / em_n;
    double sum_an2 = 0.0, sum_aiaj = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t s = 0; s < S; ++s) sum_an2 += ifft_filter[s][i] * ifft_filter[s][i];
      for (std::size_t si = 0; si + 1 < S; ++si)
        for (std::size_t sj = si + 1; sj < S; ++sj) sum_aiaj += ifft_filter[si][i] * ifft_filter[sj][i];
    }
    const double noise_energy2 = 2.0 * noise_power * sum_an2 + 4.0 * noise_power * sum_aiaj;
    const double tau = std::sqrt(noise_energy2 / 2.0);
    const double noise_mean = tau * std::sqrt(std::numbers::pi / 2.0);
    const double noise_sigma = std::sqrt((2.0 - std::numbers::pi / 2.0) * tau * tau);
    const double threshold = (noise_mean + p.noise_k * noise_sigma) / 1.7;
    for (std::size_t i = 0; i < n; ++i) {
      energy_all[i] += std::max(energy[i] - threshold, 0.0);
      an_all[i] += sum_an[i];
    }
  }
  std::vector<double> pc(n);
  // A flat region has no amplitude at all; its congruency is taken as 0.
  for (std::size_t i = 0; i < n; ++i) pc[i] = an_all[i] > 0.0 ? energy_all[i] / an_all[i] : 0.0;
  return pc;
}

namespace detail {

/// Box average over factor x factor (zero-padded 'same' convolution), then
/// keeps every factor-th sample.
inline std::vector<double> downsample(const std::vector<double>& y, std::size_t rows, std::size_t cols,
                                      std::size_t factor, std::size_t& out_rows, std::size_t& out_cols) {
  if (factor == 1) {
    out_rows = rows;
    out_cols = cols;
    return y;
  }
  const auto f = static_cast<std::ptrdiff_t>(factor);
  const std::ptrdiff_t off = f / 2;
  out_rows = (rows + factor - 1) / factor;
  out_cols = (cols + factor - 1) / factor;
  std::vector<double> out(out_rows * out_cols);
  const double w = 1.0 / static_cast<double>(factor * factor);
  for (std::size_t r = 0; r < out_rows; ++r)
    for (std::size_t c = 0; c < out_cols; ++c) {
      const auto r0 = static_cast<std::ptrdiff_t>(r * factor), c0 = static_cast<std::ptrdiff_t>(c * factor);
      double acc = 0.0;
      for (std::ptrdiff_t a = 0; a < f; ++a)
        for (std::ptrdiff_t b = 0; b < f; ++b) {
          const std::ptrdiff_t rr = r0 + off - a, cc = c0 + off - b;
          if (rr >= 0 && cc >= 0 && rr < static_cast<std::ptrdiff_t>(rows) && cc < static_cast<std::ptrdiff_t>(cols))
            acc += y[static_cast<std::size_t>(rr) * cols + static_cast<std::size_t>(cc)];
        }
      out[r * out_cols + c] = acc * w;
    }
  return out;
}

/// Scharr gradient magnitude with zero padding.
inline std::vector<double> gradient_magnitude(const std::vector<double>& y, std::size_t rows, std::size_t cols) {
  static constexpr double kx[3][3] = {{3, 0, -3}, {10, 0, -10}, {3, 0, -3}};
  static constexpr double ky[3][3] = {{3, 10, 3}, {0, 0, 0}, {-3, -10, -3}};
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      double gx = 0.0, gy = 0.0;
      for (int a = -1; a <= 1; ++a)
        for (int b = -1; b <= 1; ++b) {
          const auto rr = static_cast<std::ptrdiff_t>(r) + a, cc = static_cast<std::ptrdiff_t>(c) + b;
          if (rr < 0 || cc < 0 || rr >= static_cast<std::ptrdiff_t>(rows) || cc >= static_cast<std::ptrdiff_t>(cols))
            continue;
          const double v = y[static_cast<std::size_t>(rr) * cols + static_cast<std::size_t>(cc)];
          gx += kx[a + 1][b + 1] * v;
          gy += ky[a + 1][b + 1] * v;
        }
      gx /= 16.0;
      gy /= 16.0;
      out[r * cols + c] = std::sqrt(gx * gx + gy * gy);
    }
  return out;
}

}  // namespace detail

/// Luma on the 0..255 scale.
inline std::vector<double> luma255(const Image& img) {
  std::vector<double> y(img.height * img.width);
  for (std::size_t p = 0; p < y.size(); ++p)
    y[p] = 255.0 * (0.299 * img.data[p * 3] + 0.587 * img.data[p * 3 + 1] + 0.114 * img.data[p * 3 + 2]);
  return y;
}

inline double fsim(const Image& a, const Image& b, const FsimParams& p = {}) {
  if (a.height != b.height || a.width != b.width) throw ValidationError("fsim: image shapes differ");
  if (std::min(a.height, a.width) < 32) throw ValidationError("fsim: images must be at least 32x32");
  const auto factor = static_cast<std::size_t>(std::max(1.0, std::round(std::min(a.height, a.width) / 256.0)));
  std::size_t rows = 0, cols = 0;
  const auto y1 = detail::downsample(luma255(a), a.height, a.width, factor, rows, cols);
  const auto y2 = detail::downsample(luma255(b), b.height, b.width, factor, rows, cols);
  const auto pc1 = phase_congruency(y1, rows, cols, p);
  const auto pc2 = phase_congruency(y2, rows, cols, p);
  const auto g1 = detail::gradient_magnitude(y1, rows, cols);
  const auto g2 = detail::gradient_magnitude(y2, rows, cols);
  double num = 0.0, den = 0.0, sim_sum = 0.0;
  for (std::size_t i = 0; i < rows * cols; ++i) {
    const double pc_sim = (2.0 * (pc1[i] * pc2[i]) + p.t1) / (pc1[i] * pc1[i] + pc2[i] * pc2[i] + p.t1);
    const double g_sim = (2.0 * (g1[i] * g2[i]) + p.t2) / (g1[i] * g1[i] + g2[i] * g2[i] + p.t2);
    const double pcm = std::max(pc1[i], pc2[i]);
    num += g_sim * pc_sim * pcm;
    den += pcm;
    sim_sum += g_sim * pc_sim;
  }
  // Both images without any phase structure: fall back to the unweighted mean.
  if (!(den > 0.0)) return sim_sum / static_cast<double>(rows * cols);
  return num / den;
}

}  // namespace advise
