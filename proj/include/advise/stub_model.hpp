#pragma once

// A small deterministic stand-in for a CNN, so the whole pipeline runs
// without a deep-learning stack. The image is average-pooled onto a 7x7
// grid; each of 16 units applies a fixed colour filter and a softplus;
// class logits are quadratic poolings of the unit maps. Gradients of the
// softmax score with respect to the unit maps are analytic.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "advise/common.hpp"
#include "advise/image.hpp"
#include "advise/runner.hpp"
#include "advise/tensor_store.hpp"

namespace advise::stub {

inline constexpr std::size_t kGrid = 7;
inline constexpr std::size_t kUnits = 16;
inline constexpr int kClasses = 10;
inline constexpr const char* kModelTag = "stub-v1";

namespace detail {

/// Fixed weight in [-1, 1) drawn from a counter stream.
inline double weight(std::uint64_t stream, std::uint64_t i) {
  const std::uint64_t r = CounterRng(0x5eed0000 + stream).at(i);
  return static_cast<double>(r >> 11) * 0x1.0p-52 - 1.0;
}

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

}  // namespace detail

struct Forward {
  Tensor3 activation;        // [7, 7, 16]
  std::vector<float> probs;  // softmax over kClasses, float precision
};

/// Mean colour of each pooling cell, centred at 0.
inline std::vector<std::array<double, 3>> pool(const Image& img) {
  if (img.height < kGrid || img.width < kGrid) throw ValidationError("stub model needs images of at least 7x7 pixels");
  std::vector<std::array<double, 3>> cells(kGrid * kGrid, {0.0, 0.0, 0.0});
  for (std::size_t u = 0; u < kGrid; ++u)
    for (std::size_t v = 0; v < kGrid; ++v) {
      const std::size_t y0 = u * img.height / kGrid, y1 = (u + 1) * img.height / kGrid;
      const std::size_t x0 = v * img.width / kGrid, x1 = (v + 1) * img.width / kGrid;
      auto& cell = cells[u * kGrid + v];
      for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t x = x0; x < x1; ++x)
          for (std::size_t c = 0; c < 3; ++c) cell[c] += img.at(y, x, c);
      const double inv = 1.0 / static_cast<double>((y1 - y0) * (x1 - x0));
      for (double& c : cell) c = c * inv - 0.5;
    }
  return cells;
}

inline Forward forward(const Image& img) {
  const auto cells = pool(img);
  Forward f;
  f.activation = Tensor3(kGrid, kGrid, kUnits);
  for (std::size_t k = 0; k < kUnits; ++k) {
    const double w0 = 4.0 * detail::weight(1, 3 * k), w1 = 4.0 * detail::weight(1, 3 * k + 1),
                 w2 = 4.0 * detail::weight(1, 3 * k + 2), b = detail::weight(2, k);
    for (std::size_t p = 0; p < kGrid * kGrid; ++p) {
      const auto& c = cells[p];
      f.activation.data[p * kUnits + k] = static_cast<float>(detail::softplus(w0 * c[0] + w1 * c[1] + w2 * c[2] + b));
    }
  }
  // z_j = sum_k beta_jk * mean_uv(A_k^2) / 2
  std::array<double, kClasses> z{};
  const double inv_n = 1.0 / static_cast<double>(kGrid * kGrid);
  for (std::size_t k = 0; k < kUnits; ++k) {
    double q = 0.0;
    for (std::size_t p = 0; p < kGrid * kGrid; ++p) {
      const double a = f.activation.data[p * kUnits + k];
      q += a * a;
    }
    q *= 0.5 * inv_n;
    for (int j = 0; j < kClasses; ++j) z[j] += 2.0 * detail::weight(3, j * kUnits + k) * q;
  }
  const double zmax = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  std::array<double, kClasses> e{};
  for (int j = 0; j < kClasses; ++j) total += e[j] = std::exp(z[j] - zmax);
  f.probs.resize(kClasses);
  for (int j = 0; j < kClasses; ++j) f.probs[j] = static_cast<float>(e[j] / total);
  return f;
}

/// Classes ordered by descending probability, ties by index.
inline std::array<int, 5> top5(const std::vector<float>& probs) {
  std::vector<int> idx(probs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return probs[a] > probs[b]; });
  return {idx[0], idx[1], idx[2], idx[3], idx[4]};
}

/// d softmax_c / d A_k(u,v) = y_c * sum_j (delta_cj - y_j) * beta_jk * A_k(u,v) / (U V).
inline Tensor3 gradient(const Forward& f, int cls) {
  const double inv_n = 1.0 / static_cast<double>(kGrid * kGrid);
  const double yc = f.probs[cls];
  Tensor3 g(kGrid, kGrid, kUnits);
  for (std::size_t k = 0; k < kUnits; ++k) {
    double coef = 0.0;
    for (int j = 0; j < kClasses; ++j)
      coef += ((j == cls ? 1.0 : 0.0) - static_cast<double>(f.probs[j])) * 2.0 * detail::weight(3, j * kUnits + k);
    coef *= yc * inv_n;
    for (std::size_t p = 0; p < kGrid * kGrid; ++p)
      g.data[p * kUnits + k] = static_cast<float>(coef * f.activation.data[p * kUnits + k]);
  }
  return g;
}

inline TensorBundle export_bundle(const Image& img, const std::string& image_path, const std::string& model,
                                  const std::string& layer, const std::string& target) {
  const Forward f = forward(img);
  int cls = 0;
  if (target == "top1") {
    cls = top5(f.probs)[0];
  } else {
    try {
      std::size_t used = 0;
      cls = std::stoi(target, &used);
      if (used != target.size()) throw std::invalid_argument(target);
    } catch (const std::exception&) {
      throw ValidationError("--class must be top1 or a class index, got '" + target + "'");
    }
    if (cls < 0 || cls >= kClasses) throw ValidationError("class index " + target + " outside [0, 10)");
  }
  TensorBundle b;
  b.manifest.model = std::string(kModelTag) + ":" + model;
  b.manifest.layer = layer;
  b.manifest.image = image_path;
  b.manifest.input_size = {static_cast<int>(img.height), static_cast<int>(img.width)};
  b.manifest.class_index = cls;
  b.manifest.class_score = f.probs[cls];
  b.manifest.top5 = top5(f.probs);
  b.activation = f.activation;
  b.gradient = gradient(f, cls);
  b.logits = f.probs;
  describe_tensors(b);
  return b;
}

inline InferResult infer_one(const Image& img, const std::string& id, const std::vector<int>& classes) {
  const Forward f = forward(img);
  InferResult r;
  r.id = id;
  r.topk_indices = top5(f.probs);
  for (int i = 0; i < 5; ++i) r.topk_scores[i] = f.probs[r.topk_indices[i]];
  for (int c : classes) {
    if (c < 0 || c >= kClasses) throw ValidationError("class index " + std::to_string(c) + " outside [0, 10)");
    r.score_for_class[c] = f.probs[c];
  }
  return r;
}

/// Smooth colour gradients, a few soft blobs and a checker texture; fully
/// determined by (height, width, seed).
inline Image synthetic_image(std::size_t height, std::size_t width, std::uint64_t seed) {
  CounterRng rng(seed);
  auto unit = [&] { return static_cast<double>(rng.next() >> 11) * 0x1.0p-53; };
  struct Blob {
    double cy, cx, r;
    std::array<double, 3> colour;
  };
  std::vector<Blob> blobs(4);
  for (auto& b : blobs) b = {unit() * height, unit() * width, (0.1 + 0.2 * unit()) * std::min(height, width),
                             {unit(), unit(), unit()}};
  const double fx = 0.05 + 0.2 * unit(), fy = 0.05 + 0.2 * unit(), phase = 6.283 * unit();
  Image img(height, width);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      std::array<double, 3> c{};
      for (std::size_t k = 0; k < 3; ++k)
        c[k] = 0.35 + 0.15 * std::sin(fx * x + fy * y + phase + 2.0 * k) + 0.05 * static_cast<double>((x / 4 + y / 4) % 2);
      for (const auto& b : blobs) {
        const double d2 = ((y - b.cy) * (y - b.cy) + (x - b.cx) * (x - b.cx)) / (b.r * b.r);
        const double w = std::exp(-d2);
        for (std::size_t k = 0; k < 3; ++k) c[k] = (1.0 - w) * c[k] + w * b.colour[k];
      }
      for (std::size_t k = 0; k < 3; ++k) img.at(y, x, k) = std::clamp(c[k], 0.0, 1.0);
    }
  return quantize8(img);
}

/// In-process runner over the stub model; reads images from disk like the
/// subprocess one does.
class StubRunner final : public ModelRunner {
 public:
  TensorBundle export_bundle(const ExportRequest& req) override {
    auto b = stub::export_bundle(read_png(req.image), req.image.string(), req.model, req.layer, req.target);
    write_bundle(b, req.out);
    return read_bundle(req.out);
  }
  std::vector<InferResult> infer(const InferRequest& req) override {
    std::vector<InferResult> out;
    for (const auto& im : req.images) out.push_back(infer_one(read_png(im.path), im.id, req.classes));
    return out;
  }
};

}  // namespace advise::stub
