// advise: unit scoring, saliency maps, evaluation, ablation and reports.
//
// Exit codes: 0 ok, 1 unexpected failure, 2 invalid input or flags,
// 3 numerical failure, 4 model runner failure or timeout.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "advise/ablation.hpp"
#include "advise/evaluation.hpp"
#include "advise/image.hpp"
#include "advise/map_io.hpp"
#include "advise/report.hpp"
#include "advise/runner.hpp"
#include "advise/tensor_store.hpp"
#include "advise/unit_scoring.hpp"

namespace fs = std::filesystem;
using namespace advise;

namespace {

struct ScoringFlags {
  std::string gamma = "search";
  int grid_size = 512;
  double prominence = kDefaultProminence;
  std::string source = "gradient";
  unsigned threads = 0;

  void add(CLI::App* app) {
    app->add_option("--gamma", gamma, "search or fixed:<value>")->capture_default_str();
    app->add_option("--grid-size", grid_size, "KDE evaluation grid points")->capture_default_str();
    app->add_option("--prominence", prominence, "peak prominence as a fraction of the density maximum")
        ->capture_default_str();
    app->add_option("--score-source", source, "gradient or activation")->capture_default_str();
    app->add_option("--threads", threads, "worker threads, 0 = all cores")->capture_default_str();
  }

  ScoringConfig config() const {
    ScoringConfig cfg;
    cfg.kde.set_gamma_mode(gamma);
    cfg.kde.grid_size = grid_size;
    cfg.prominence = prominence;
    cfg.source = parse_score_source(source);
    cfg.threads = threads;
    cfg.validate();
    return cfg;
  }
};

struct RunnerFlags {
  std::string command;
  std::string workdir;
  int capacity = 64;
  double timeout = 600.0;

  void add(CLI::App* app) {
    app->add_option("--runner", command, "model runner command prefix")->required();
    app->add_option("--runner-workdir", workdir, "working directory for the runner");
    app->add_option("--runner-capacity", capacity, "images per infer call")->capture_default_str();
    app->add_option("--runner-timeout", timeout, "seconds before the runner is killed")->capture_default_str();
  }

  RunnerHandle handle() const {
    RunnerHandle h;
    h.command = command;
    h.workdir = workdir;
    h.capacity = capacity;
    h.timeout_seconds = timeout;
    h.validate();
    return h;
  }
};

std::optional<std::vector<int>> load_scores(const std::string& path) {
  if (path.empty()) return std::nullopt;
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open scores file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed scores file " + path + ": " + e.what());
  }
  return scores_from_json(j);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

bool parse_baseline(const std::string& s) {
  if (s == "none") return false;
  if (s == "gradcam") return true;
  throw ValidationError("--baseline must be none or gradcam, got '" + s + "'");
}

std::string image_for(const std::string& flag, const TensorBundle& b) {
  if (!flag.empty()) return flag;
  if (b.manifest.image.empty()) throw ValidationError("--image not given and the bundle manifest names no image");
  return b.manifest.image;
}

int run(int argc, char** argv) {
  CLI::App app{"ADVISE unit scoring, saliency maps and explanation metrics"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "advise 1.0.0");

  // score
  auto* score = app.add_subcommand("score", "score every unit of a tensor bundle");
  std::string bundle_dir, out_path;
  ScoringFlags sflags;
  score->add_option("--bundle", bundle_dir, "bundle directory")->required();
  score->add_option("--out", out_path, "scores.json path")->required();
  sflags.add(score);
  score->callback([&] {
    const auto cfg = sflags.config();
    const auto bundle = read_bundle(bundle_dir);
    const auto scores = score_units(bundle, cfg);
    write_text(out_path, scores_to_json(bundle_dir, cfg, scores).dump(2) + "\n");
  });

  // explain
  auto* exp = app.add_subcommand("explain", "build score-grouped saliency maps");
  std::string scores_path, image_path, baseline = "none";
  bool no_relu = false;
  exp->add_option("--bundle", bundle_dir, "bundle directory")->required();
  exp->add_option("--out", out_path, "output directory (maps/ is created inside)")->required();
  exp->add_option("--scores", scores_path, "scores.json from `advise score`; computed when absent");
  exp->add_option("--image", image_path, "input image for overlays; defaults to the manifest image");
  exp->add_flag("--no-relu", no_relu, "keep negative map values");
  exp->add_option("--baseline", baseline, "none or gradcam")->capture_default_str();
  sflags.add(exp);
  exp->callback([&] {
    const auto cfg = sflags.config();
    const bool gradcam = parse_baseline(baseline);
    auto bundle = read_bundle(bundle_dir);
    const Image image = read_png(image_for(image_path, bundle));
    const auto e = explain(std::move(bundle), cfg, !no_relu, gradcam, load_scores(scores_path));
    write_map_artifacts(fs::path(out_path) / "maps", e.maps, image, e.gradcam);
  });

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "mask the image with each map and score the explanation");
  std::string bundle2_dir, select = "best-avx", mask = "maps";
  bool timing = false;
  RunnerFlags rflags;
  ev->add_option("--bundle", bundle_dir, "bundle for the predicted class")->required();
  ev->add_option("--bundle2", bundle2_dir, "bundle for the runner-up class (needed for CS)");
  ev->add_option("--out", out_path, "output directory")->required();
  ev->add_option("--scores", scores_path, "scores.json for --bundle; computed when absent");
  ev->add_option("--image", image_path, "input image; defaults to the manifest image");
  ev->add_option("--select", select, "best-avx or score:<i>")->capture_default_str();
  ev->add_option("--mask", mask, "maps or identity (all-ones mask)")->capture_default_str();
  ev->add_flag("--no-relu", no_relu, "keep negative map values");
  ev->add_option("--baseline", baseline, "none or gradcam")->capture_default_str();
  ev->add_flag("--timing", timing, "report wall-clock seconds per map");
  sflags.add(ev);
  rflags.add(ev);
  ev->callback([&] {
    const auto cfg = sflags.config();
    EvalOptions opt;
    opt.select = SelectionPolicy::parse(select);
    opt.mask = parse_mask_mode(mask);
    opt.gradcam = parse_baseline(baseline);
    opt.timing = timing;
    SubprocessRunner runner(rflags.handle(), fs::path(out_path) / "runner");
    auto b1 = read_bundle(bundle_dir);
    const Image image = read_png(image_for(image_path, b1));
    const auto e1 = explain(std::move(b1), cfg, !no_relu, opt.gradcam, load_scores(scores_path));
    std::optional<Explanation> e2;
    if (!bundle2_dir.empty())
      e2 = explain(read_bundle(bundle2_dir), cfg, !no_relu, opt.gradcam);
    else
      std::cerr << "warning: no --bundle2 given; class sensitivity is undefined for every map\n";
    const auto result = evaluate_explanation(image, e1, e2 ? &*e2 : nullptr, runner, fs::path(out_path) / "runner", opt);
    write_text(fs::path(out_path) / "metrics.json", metrics_to_json(result, timing).dump(2) + "\n");
    write_text(fs::path(out_path) / "metrics.csv", metrics_to_csv(result, timing));
    SaliencyMapSet maps = e1.maps;
    if (opt.mask == MaskMode::maps) maps.selected = result.headline().score;
    write_map_artifacts(fs::path(out_path) / "maps", maps, image, e1.gradcam);
  });

  // ablate
  auto* ab = app.add_subcommand("ablate", "salt-and-pepper robustness study");
  std::vector<std::string> images;
  std::vector<double> densities = kDefaultDensities;
  std::uint64_t seed = 0;
  std::vector<std::string> relu_modes{"with", "without"};
  ab->add_option("--image", images, "input images (repeatable)")->required();
  ab->add_option("--out", out_path, "output directory")->required();
  ab->add_option("--densities", densities, "comma-separated noise densities")->delimiter(',')->capture_default_str();
  ab->add_option("--seed", seed, "noise seed")->capture_default_str();
  ab->add_option("--relu-modes", relu_modes, "with,without")->delimiter(',')->capture_default_str();
  ab->add_option("--baseline", baseline, "none or gradcam")->capture_default_str();
  sflags.add(ab);
  rflags.add(ab);
  ab->callback([&] {
    const auto cfg = sflags.config();
    AblationPlan plan;
    plan.images = images;
    plan.densities = densities;
    plan.seed = seed;
    plan.relu_modes.clear();
    for (const auto& m : relu_modes) plan.relu_modes.push_back(parse_relu_mode(m));
    plan.gradcam = parse_baseline(baseline);
    plan.validate();
    SubprocessRunner runner(rflags.handle(), fs::path(out_path) / "runner");
    const auto rows = run_ablation(plan, runner, out_path, cfg);
    write_text(fs::path(out_path) / "ablation.csv", ablation_to_csv(rows));
  });

  // report
  auto* rep = app.add_subcommand("report", "aggregate metrics/ablation tables and plot AVX against delta");
  std::vector<std::string> inputs;
  std::string table, plot, aggregation = "per-image";
  rep->add_option("--input", inputs, "ablation.csv or metrics.csv (repeatable)")->required();
  rep->add_option("--table", table, "aggregated CSV output");
  rep->add_option("--plot", plot, "SVG plot output");
  rep->add_option("--aggregation", aggregation, "per-image or of-averages")->capture_default_str();
  rep->callback([&] {
    ReportSpec spec;
    for (const auto& i : inputs) spec.inputs.emplace_back(i);
    if (!table.empty()) spec.table = table;
    if (!plot.empty()) spec.plot = plot;
    spec.aggregation = parse_aggregation(aggregation);
    spec.validate();
    std::vector<ReportRow> rows;
    for (const auto& p : spec.inputs) {
      auto part = load_report_rows(p);
      rows.insert(rows.end(), part.begin(), part.end());
    }
    const auto series = aggregate(rows);
    if (spec.table) write_text(*spec.table, report_table_csv(series, spec.aggregation));
    if (spec.plot) write_text(*spec.plot, report_svg(series, spec.aggregation));
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const RunnerError& e) {
    std::cerr << "advise: runner error: " << e.what() << '\n';
    return 4;
  } catch (const NumericalError& e) {
    std::cerr << "advise: numerical error: " << e.what() << '\n';
    return 3;
  } catch (const ValidationError& e) {
    std::cerr << "advise: invalid input: " << e.what() << '\n';
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "advise: invalid JSON: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "advise: " << e.what() << '\n';
    return 1;
  }
}
