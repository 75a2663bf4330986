#pragma once

// Salt-and-pepper robustness study: ablate each input at a schedule of noise
// densities, re-export and re-explain it, and record the headline metrics
// with and without the ReLU in the map construction.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "advise/common.hpp"
#include "advise/csv.hpp"
#include "advise/evaluation.hpp"
#include "advise/image.hpp"
#include "advise/map_io.hpp"
#include "advise/runner.hpp"

namespace advise {

inline const std::vector<double> kDefaultDensities{0.025, 0.05, 0.075, 0.1, 0.125, 0.15, 0.175, 0.2, 0.225};

enum class ReluMode { with, without };

inline std::string to_string(ReluMode m) { return m == ReluMode::with ? "with" : "without"; }

inline ReluMode parse_relu_mode(const std::string& s) {
  if (s == "with") return ReluMode::with;
  if (s == "without") return ReluMode::without;
  throw ValidationError("relu mode must be with or without, got '" + s + "'");
}

/// Replaces exactly round(density * H * W) distinct pixels, each set to
/// black or white on all channels with equal probability.
inline Image salt_pepper(const Image& image, double density, std::uint64_t seed) {
  if (!(density >= 0.0 && density < 1.0)) throw ValidationError("noise density must lie in [0,1)");
  const std::size_t n = image.height * image.width;
  const auto count = static_cast<std::size_t>(std::llround(density * static_cast<double>(n)));
  Image out = image;
  if (count == 0) return out;
  CounterRng pick(seed);
  CounterRng colour = pick.split(1);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(pick.below(n - i));
    std::swap(idx[i], idx[j]);
    const double v = (colour.next() >> 63) ? 1.0 : 0.0;
    for (std::size_t c = 0; c < 3; ++c) out.data[idx[i] * 3 + c] = v;
  }
  return out;
}

/// Per-row seed: a pure function of (plan seed, image path, density index).
inline std::uint64_t ablation_seed(std::uint64_t seed, const std::string& image, std::size_t density_index) {
  return splitmix64(seed ^ splitmix64(fnv1a64(image) + static_cast<std::uint64_t>(density_index)));
}

struct AblationPlan {
  std::vector<double> densities = kDefaultDensities;
  std::uint64_t seed = 0;
  std::vector<ReluMode> relu_modes{ReluMode::with, ReluMode::without};
  std::vector<std::string> images;
  bool gradcam = false;

  void validate() const {
    if (images.empty()) throw ValidationError("ablation plan has no images");
    if (densities.empty()) throw ValidationError("ablation plan has no densities");
    if (relu_modes.empty()) throw ValidationError("ablation plan has no relu modes");
    for (std::size_t i = 0; i < densities.size(); ++i) {
      if (!(densities[i] >= 0.0 && densities[i] < 1.0))
        throw ValidationError("density " + format_real(densities[i]) + " outside [0,1)");
      if (i > 0 && !(densities[i] > densities[i - 1])) throw ValidationError("densities must be strictly increasing");
    }
  }
};

struct AblationRow {
  std::string image;
  double delta = 0.0;
  ReluMode relu = ReluMode::with;
  MetricRecord record;
};

namespace detail {

template <class E>
[[noreturn]] void rethrow_with_context(const E& e, const std::string& ctx) {
  throw E(ctx + ": " + e.what());
}

}  // namespace detail

/// Runs the plan. Per-row artifacts land in `out/rows/<image#>/d<density#>/`.
inline std::vector<AblationRow> run_ablation(const AblationPlan& plan, ModelRunner& runner,
                                             const std::filesystem::path& out, const ScoringConfig& scoring) {
  plan.validate();
  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < plan.images.size(); ++i) {
    const std::string& path = plan.images[i];
    const Image image = read_png(path);
    for (std::size_t d = 0; d < plan.densities.size(); ++d) {
      const double delta = plan.densities[d];
      const std::string ctx = "image " + path + ", delta " + format_real(delta);
      try {
        const auto dir = out / "rows" / std::to_string(i) / ("d" + std::to_string(d));
        std::filesystem::create_directories(dir);
        const Image ablated = salt_pepper(image, delta, ablation_seed(plan.seed, path, d));
        write_png(dir / "input.png", ablated);

        ExportRequest ex;
        ex.image = dir / "input.png";
        ex.out = dir / "bundle";
        TensorBundle b1 = runner.export_bundle(ex);
        std::optional<TensorBundle> b2;
        if (b1.manifest.top5) {
          ex.target = std::to_string((*b1.manifest.top5)[1]);
          ex.out = dir / "bundle_c2";
          b2 = runner.export_bundle(ex);
        }
        const auto s1 = score_units(b1, scoring).scores;
        const auto s2 = b2 ? std::optional(score_units(*b2, scoring).scores) : std::nullopt;

        for (ReluMode mode : plan.relu_modes) {
          const bool relu = mode == ReluMode::with;
          const Explanation e1 = explain(b1, scoring, relu, plan.gradcam, s1);
          std::optional<Explanation> e2;
          if (b2) e2 = explain(*b2, scoring, relu, plan.gradcam, s2);
          EvalOptions opt;
          opt.gradcam = plan.gradcam;
          const auto mode_dir = dir / to_string(mode);
          const Evaluation ev = evaluate_explanation(ablated, e1, e2 ? &*e2 : nullptr, runner, mode_dir / "work", opt);
          write_json_file(mode_dir / "metrics.json", metrics_to_json(ev, false));
          rows.push_back({path, delta, mode, ev.headline()});
          for (const auto& r : ev.records)
            if (r.method == "gradcam") rows.push_back({path, delta, mode, r});
        }
      } catch (const RunnerTimeout& e) {
        detail::rethrow_with_context(e, ctx);
      } catch (const RunnerError& e) {
        detail::rethrow_with_context(e, ctx);
      } catch (const NumericalError& e) {
        detail::rethrow_with_context(e, ctx);
      } catch (const ValidationError& e) {
        detail::rethrow_with_context(e, ctx);
      }
    }
  }
  return rows;
}

inline std::string ablation_to_csv(const std::vector<AblationRow>& rows) {
  std::string out =
      csv::row({"image", "delta", "relu_mode", "method", "avx", "ad", "ssim", "fsim", "mse", "hit", "cs"});
  for (const auto& r : rows) {
    const auto& c = r.record.result.effective;
    out += csv::row({r.image, format_real(r.delta), to_string(r.relu), r.record.method, format_real(r.record.result.avx),
                     format_real(c.ad), format_real(c.ssim), format_real(c.fsim), format_real(c.mse),
                     std::to_string(r.record.hit),
                     r.record.cs.state == CsState::defined ? format_real(r.record.cs.value) : "NA"});
  }
  return out;
}

}  // namespace advise
