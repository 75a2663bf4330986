#pragma once

// End-to-end evaluation of an explanation: mask the input with every map,
// ask the runner for the masked predictions in one batch, then compute the
// metric record per map and pick the headline map.

#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "advise/common.hpp"
#include "advise/csv.hpp"
#include "advise/image.hpp"
#include "advise/metrics.hpp"
#include "advise/runner.hpp"
#include "advise/saliency.hpp"
#include "advise/tensor_store.hpp"
#include "advise/unit_scoring.hpp"

namespace advise {

/// Which map becomes the headline record.
struct SelectionPolicy {
  bool best_avx = true;
  int score = 0;  // used when !best_avx

  static SelectionPolicy parse(const std::string& s) {
    if (s == "best-avx") return {};
    if (s.starts_with("score:")) {
      const std::string v = s.substr(6);
      char* end = nullptr;
      const long k = std::strtol(v.c_str(), &end, 10);
      if (!v.empty() && end == v.c_str() + v.size() && k >= 0) return {false, static_cast<int>(k)};
    }
    throw ValidationError("--select must be best-avx or score:<non-negative int>, got '" + s + "'");
  }
  std::string str() const { return best_avx ? "best-avx" : "score:" + std::to_string(score); }
};

enum class MaskMode { maps, identity };

inline MaskMode parse_mask_mode(const std::string& s) {
  if (s == "maps") return MaskMode::maps;
  if (s == "identity") return MaskMode::identity;
  throw ValidationError("--mask must be maps or identity, got '" + s + "'");
}

/// Scores, maps and optional Grad-CAM baseline for one bundle.
struct Explanation {
  TensorBundle bundle;
  UnitScoreVector scores;
  SaliencyMapSet maps;
  std::optional<SaliencyMap> gradcam;
};

inline Explanation explain(TensorBundle bundle, const ScoringConfig& cfg, bool apply_relu, bool with_gradcam,
                           const std::optional<std::vector<int>>& precomputed = std::nullopt) {
  Explanation e;
  e.bundle = std::move(bundle);
  if (precomputed) {
    if (precomputed->size() != e.bundle.units())
      throw ValidationError("scores file lists " + std::to_string(precomputed->size()) + " units, bundle has " +
                            std::to_string(e.bundle.units()));
    e.scores.scores = *precomputed;
  } else {
    e.scores = score_units(e.bundle, cfg);
  }
  e.maps = build_advise_maps(e.bundle, e.scores, apply_relu, cfg.threads);
  if (with_gradcam) e.gradcam = gradcam_map(e.bundle);
  return e;
}

struct EvalOptions {
  SelectionPolicy select;
  MaskMode mask = MaskMode::maps;
  bool gradcam = false;  // also evaluate the Grad-CAM baseline
  bool timing = false;
};

struct Evaluation {
  std::vector<MetricRecord> records;
  std::optional<std::size_t> selected;
  std::pair<int, int> peak_range{0, 0};
  bool cs_missing = false;
  int target_class = 0;
  double y_c = 0.0;

  const MetricRecord& headline() const {
    if (!selected) throw Error("evaluation has no headline record");
    return records[*selected];
  }
};

namespace detail {

/// The second-class map paired with an ADVISE map of score `s`: same score
/// if present, else the nearest score (lower on ties).
inline const SaliencyMap* paired_map(const SaliencyMapSet& set, int s) {
  const SaliencyMap* best = nullptr;
  for (const auto& m : set.maps) {
    if (!best || std::abs(m.score - s) < std::abs(best->score - s)) best = &m;
  }
  return best;
}

inline CsValue cs_between(const Map2& a, const Map2* b) {
  if (!b) return CsValue::missing();
  if (a.rows != b->rows || a.cols != b->cols)
    throw ValidationError("class-sensitivity maps differ in size; bundles disagree on input_size");
  return CsValue::of(class_sensitivity(a.data, b->data));
}

}  // namespace detail

/// Evaluates every map of `e` on `image`. `second` holds the explanation
/// for the runner-up class; without it CS is undefined. Masked images are
/// quantised to 8 bits and the metrics use exactly what the runner sees.
inline Evaluation evaluate_explanation(const Image& image, const Explanation& e, const Explanation* second,
                                       ModelRunner& runner, const std::filesystem::path& scratch,
                                       const EvalOptions& opt = {}) {
  const auto [H, W] = e.bundle.manifest.input_size;
  if (image.height != static_cast<std::size_t>(H) || image.width != static_cast<std::size_t>(W))
    throw ValidationError("image is " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                          " but the bundle was exported at " + std::to_string(H) + "x" + std::to_string(W));
  std::filesystem::create_directories(scratch);

  struct Candidate {
    MetricRecord rec;
    Map2 mask;
    CsValue cs;
    Image masked;
  };
  std::vector<Candidate> cands;
  if (opt.mask == MaskMode::identity) {
    Candidate c;
    c.rec.map_id = "identity";
    c.rec.method = "identity";
    c.mask = Map2(image.height, image.width, 1.0);
    c.cs = second ? CsValue::of(std::nullopt) : CsValue::missing();
    cands.push_back(std::move(c));
  } else {
    for (const auto& m : e.maps.maps) {
      Candidate c;
      c.rec.map_id = "score_" + std::to_string(m.score);
      c.rec.score = m.score;
      c.mask = m.normalized;
      if (second) {
        const SaliencyMap* other = detail::paired_map(second->maps, m.score);
        c.cs = detail::cs_between(m.normalized, other ? &other->normalized : nullptr);
      } else {
        c.cs = CsValue::missing();
      }
      cands.push_back(std::move(c));
    }
    if (opt.gradcam) {
      if (!e.gradcam) throw ValidationError("Grad-CAM baseline requested but not built");
      Candidate c;
      c.rec.map_id = "gradcam";
      c.rec.method = "gradcam";
      c.mask = e.gradcam->normalized;
      const Map2* other = second && second->gradcam ? &second->gradcam->normalized : nullptr;
      c.cs = second ? detail::cs_between(c.mask, other) : CsValue::missing();
      cands.push_back(std::move(c));
    }
  }

  const Image original = quantize8(image);
  const int cls = e.bundle.manifest.class_index;
  InferRequest req;
  req.classes = {cls};
  const auto orig_path = scratch / "original.png";
  write_png(orig_path, original);
  req.images.push_back({"original", orig_path});
  for (auto& c : cands) {
    c.masked = quantize8(mask_image(original, c.mask));
    const auto path = scratch / ("masked_" + c.rec.map_id + ".png");
    write_png(path, c.masked);
    req.images.push_back({c.rec.map_id, path});
  }
  const auto results = runner.infer(req);
  if (results.size() != req.images.size()) throw RunnerError("runner returned a result count that does not match");

  Evaluation ev;
  ev.target_class = cls;
  ev.y_c = results[0].score(cls);
  ev.cs_missing = second == nullptr;
  ev.peak_range = e.scores.peak_range();
  for (std::size_t i = 0; i < cands.size(); ++i) {
    auto& c = cands[i];
    const auto& r = results[i + 1];
    const auto t0 = std::chrono::steady_clock::now();
    MetricRecord rec = score_explanation(original, c.masked, cls, r.topk_indices, ev.y_c, r.score(cls), c.cs);
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
    rec.map_id = c.rec.map_id;
    rec.method = c.rec.method;
    rec.score = c.rec.score;
    rec.seconds = dt.count();
    ev.records.push_back(std::move(rec));
  }

  if (opt.mask == MaskMode::identity) {
    ev.selected = 0;
  } else if (opt.select.best_avx) {
    for (std::size_t i = 0; i < ev.records.size(); ++i) {
      if (ev.records[i].method != "advise") continue;
      if (!ev.selected || ev.records[i].result.avx > ev.records[*ev.selected].result.avx) ev.selected = i;
    }
  } else {
    for (std::size_t i = 0; i < ev.records.size(); ++i)
      if (ev.records[i].score == opt.select.score) ev.selected = i;
    if (!ev.selected)
      throw ValidationError("--select " + opt.select.str() + ": no map with that score (peak range " +
                            std::to_string(ev.peak_range.first) + "-" + std::to_string(ev.peak_range.second) + ")");
  }
  return ev;
}

inline nlohmann::ordered_json metrics_to_json(const Evaluation& ev, bool with_timing) {
  auto arr = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < ev.records.size(); ++i) {
    auto j = ev.records[i].to_json(with_timing);
    j["selected"] = ev.selected == i;
    arr.push_back(std::move(j));
  }
  return arr;
}

inline const std::vector<std::string>& metrics_csv_header() {
  static const std::vector<std::string> h{"map",   "method", "score", "hit",   "cs",    "cs_state",
                                          "ad",    "ssim",   "fsim",  "mse",   "avx",   "penalty_branch",
                                          "penalty_delta", "y_c", "o_c",   "peak_range", "seconds", "selected"};
  return h;
}

/// Flat table; seconds are "NA" unless timing was requested so that the
/// default output is reproducible byte for byte.
inline std::string metrics_to_csv(const Evaluation& ev, bool with_timing) {
  std::string out = csv::row(metrics_csv_header());
  const std::string range = std::to_string(ev.peak_range.first) + "-" + std::to_string(ev.peak_range.second);
  for (std::size_t i = 0; i < ev.records.size(); ++i) {
    const auto& r = ev.records[i];
    const auto& c = r.result.effective;
    out += csv::row({r.map_id, r.method, r.score ? std::to_string(*r.score) : "NA", std::to_string(r.hit),
                     r.cs.state == CsState::defined ? format_real(r.cs.value) : "NA", to_string(r.cs.state),
                     format_real(c.ad), format_real(c.ssim), format_real(c.fsim), format_real(c.mse),
                     format_real(r.result.avx), to_string(r.result.branch), format_real(r.result.delta),
                     format_real(r.y_c), format_real(r.o_c), range, with_timing ? format_real(r.seconds) : "NA",
                     ev.selected == i ? "1" : "0"});
  }
  return out;
}

}  // namespace advise
