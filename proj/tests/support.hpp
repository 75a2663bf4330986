#pragma once

// Shared fixtures for the test binaries: seeded generators, quantile-placed
// sample sets, synthetic bundles and scratch directories.

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "advise/common.hpp"
#include "advise/tensor_store.hpp"

namespace advise::test {

/// Seeded uniform/normal draws on top of the counter generator.
class Draws {
 public:
  explicit Draws(std::uint64_t seed) : rng_(seed) {}
  double uniform() { return static_cast<double>(rng_.next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double log_uniform(double lo, double hi) { return std::exp(uniform(std::log(lo), std::log(hi))); }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(rng_.below(n)); }
  double normal() {
    const double u1 = 1.0 - uniform(), u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  CounterRng rng_;
};

/// Standard normal quantile by bisection on erfc.
inline double normal_quantile(double p) {
  double lo = -40.0, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double cdf = 0.5 * std::erfc(-mid / std::sqrt(2.0));
    (cdf < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// n points at the (i + 1/2)/n quantiles of N(mu, sigma): a cluster with
/// the exact Gaussian profile and no sampling clumps.
inline std::vector<double> quantile_cluster(std::size_t n, double mu, double sigma) {
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = mu + sigma * normal_quantile((static_cast<double>(i) + 0.5) / static_cast<double>(n));
  return out;
}

inline std::vector<double> concat(std::vector<double> a, const std::vector<double>& b) {
  a.reserve(a.size() + b.size());
  for (double x : b) a.push_back(x);
  return a;
}

/// Per-process scratch directory, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("advise-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Bundle of shape [U,V,K] with the given fill functions; input size H x W.
inline TensorBundle make_bundle(std::size_t U, std::size_t V, std::size_t K,
                                const std::function<double(std::size_t, std::size_t, std::size_t)>& act,
                                const std::function<double(std::size_t, std::size_t, std::size_t)>& grad,
                                int H = 32, int W = 32) {
  TensorBundle b;
  b.manifest.model = "synthetic";
  b.manifest.layer = "conv";
  b.manifest.image = "synthetic.png";
  b.manifest.input_size = {H, W};
  b.manifest.class_index = 3;
  b.manifest.class_score = 0.5;
  b.activation = Tensor3(U, V, K);
  b.gradient = Tensor3(U, V, K);
  for (std::size_t u = 0; u < U; ++u)
    for (std::size_t v = 0; v < V; ++v)
      for (std::size_t k = 0; k < K; ++k) {
        b.activation.at(u, v, k) = static_cast<float>(act(u, v, k));
        b.gradient.at(u, v, k) = static_cast<float>(grad(u, v, k));
      }
  describe_tensors(b);
  return b;
}

/// Bundle whose unit k carries gradients `units[k]` (each of size U*V).
inline TensorBundle bundle_from_units(std::size_t U, std::size_t V, const std::vector<std::vector<double>>& units) {
  return make_bundle(
      U, V, units.size(), [](std::size_t u, std::size_t v, std::size_t k) { return 1.0 + 0.1 * double(u + v + k); },
      [&](std::size_t u, std::size_t v, std::size_t k) { return units[k][u * V + v]; });
}

/// 13x13 bundle whose gradient units are constant, one cluster and two
/// well separated clusters: scores 0, 1 and 2.
inline TensorBundle three_unit_bundle() {
  constexpr std::size_t side = 13;
  return bundle_from_units(side, side,
                           {std::vector<double>(side * side, 0.25), quantile_cluster(side * side, 0.0, 1.0),
                            concat(quantile_cluster(85, -1.0, 0.05), quantile_cluster(84, 1.0, 0.05))});
}

}  // namespace advise::test
