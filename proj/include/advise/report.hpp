#pragma once

// Aggregates metric/ablation tables into AVX-vs-delta series and renders a
// self-contained SVG line plot.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "advise/common.hpp"
#include "advise/csv.hpp"
#include "advise/metrics.hpp"

namespace advise {

enum class Aggregation { per_image, of_averages };

inline std::string to_string(Aggregation a) { return a == Aggregation::per_image ? "per-image" : "of-averages"; }

inline Aggregation parse_aggregation(const std::string& s) {
  if (s == "per-image") return Aggregation::per_image;
  if (s == "of-averages") return Aggregation::of_averages;
  throw ValidationError("--aggregation must be per-image or of-averages, got '" + s + "'");
}

struct ReportSpec {
  std::vector<std::filesystem::path> inputs;
  std::optional<std::filesystem::path> table;
  std::optional<std::filesystem::path> plot;
  Aggregation aggregation = Aggregation::per_image;

  void validate() const {
    if (inputs.empty()) throw ValidationError("report needs at least one input file");
    if (!table && !plot) throw ValidationError("report needs --table and/or --plot");
  }
};

/// One evaluated row: effective components plus its AVX.
struct ReportRow {
  std::string method = "advise";
  std::string relu_mode = "with";
  double delta = 0.0;
  Components components;
  double avx = 0.0;
};

namespace detail {

inline double parse_real(const csv::Record& r, const std::string& key, const std::string& where) {
  auto it = r.find(key);
  if (it == r.end()) throw ValidationError(where + ": missing column '" + key + "'");
  char* end = nullptr;
  const double v = std::strtod(it->second.c_str(), &end);
  if (it->second.empty() || end != it->second.c_str() + it->second.size() || !std::isfinite(v))
    throw ValidationError(where + ": column '" + key + "' has non-numeric value '" + it->second + "'");
  return v;
}

}  // namespace detail

/// Reads ablation.csv or metrics.csv rows. metrics.csv rows count only when
/// marked selected, with delta 0 and relu mode "with" unless stated.
inline std::vector<ReportRow> load_report_rows(const std::filesystem::path& path) {
  const auto recs = csv::read(path);
  std::vector<ReportRow> out;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto& r = recs[i];
    const std::string where = path.string() + " row " + std::to_string(i + 1);
    if (auto s = r.find("selected"); s != r.end() && s->second != "1") continue;
    ReportRow row;
    if (auto m = r.find("method"); m != r.end()) row.method = m->second;
    if (auto m = r.find("relu_mode"); m != r.end()) row.relu_mode = m->second;
    if (r.count("delta")) row.delta = detail::parse_real(r, "delta", where);
    row.components = {detail::parse_real(r, "ad", where), detail::parse_real(r, "ssim", where),
                      detail::parse_real(r, "fsim", where), detail::parse_real(r, "mse", where)};
    row.avx = detail::parse_real(r, "avx", where);
    out.push_back(std::move(row));
  }
  return out;
}

struct SeriesPoint {
  double delta = 0.0;
  std::size_t n = 0;
  double avx_per_image = 0.0;    // mean of the per-row AVX
  double avx_of_averages = 0.0;  // AVX of the mean components
  Components mean;

  double avx(Aggregation a) const { return a == Aggregation::per_image ? avx_per_image : avx_of_averages; }
};

struct Series {
  std::string method;
  std::string relu_mode;
  std::vector<SeriesPoint> points;  // ascending delta

  std::string label() const { return method + " (relu " + relu_mode + ")"; }
};

inline std::vector<Series> aggregate(const std::vector<ReportRow>& rows) {
  if (rows.empty()) throw ValidationError("report: no rows to aggregate");
  std::map<std::pair<std::string, std::string>, std::map<double, std::vector<const ReportRow*>>> groups;
  for (const auto& r : rows) groups[{r.method, r.relu_mode}][r.delta].push_back(&r);
  std::vector<Series> out;
  for (const auto& [key, by_delta] : groups) {
    Series s{key.first, key.second, {}};
    for (const auto& [delta, members] : by_delta) {
      SeriesPoint p;
      p.delta = delta;
      p.n = members.size();
      Components sum{0.0, 0.0, 0.0, 0.0};
      double avx_sum = 0.0;
      for (const auto* m : members) {
        sum.ad += m->components.ad;
        sum.ssim += m->components.ssim;
        sum.fsim += m->components.fsim;
        sum.mse += m->components.mse;
        avx_sum += m->avx;
      }
      const auto n = static_cast<double>(p.n);
      p.mean = {sum.ad / n, sum.ssim / n, sum.fsim / n, sum.mse / n};
      p.avx_per_image = avx_sum / n;
      p.avx_of_averages = harmonic_avx(p.mean);
      s.points.push_back(p);
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline std::string report_table_csv(const std::vector<Series>& series, Aggregation agg) {
  std::string out = csv::row({"method", "relu_mode", "delta", "n", "avx", "avx_per_image", "avx_of_averages", "ad",
                              "ssim", "fsim", "mse"});
  for (const auto& s : series)
    for (const auto& p : s.points)
      out += csv::row({s.method, s.relu_mode, format_real(p.delta), std::to_string(p.n), format_real(p.avx(agg)),
                       format_real(p.avx_per_image), format_real(p.avx_of_averages), format_real(p.mean.ad),
                       format_real(p.mean.ssim), format_real(p.mean.fsim), format_real(p.mean.mse)});
  return out;
}

namespace detail {

inline std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

/// AVX (y, fixed [0,1]) against noise density (x), one polyline per series.
inline std::string report_svg(const std::vector<Series>& series, Aggregation agg) {
  using detail::fmt2;
  constexpr double W = 640, H = 400, L = 64, R = 200, T = 24, B = 56;
  const double pw = W - L - R, ph = H - T - B;
  double xlo = 1e300, xhi = -1e300;
  for (const auto& s : series)
    for (const auto& p : s.points) xlo = std::min(xlo, p.delta), xhi = std::max(xhi, p.delta);
  if (!(xhi > xlo)) {
    xlo -= 0.05;
    xhi += 0.05;
  }
  auto sx = [&](double x) { return L + (x - xlo) / (xhi - xlo) * pw; };
  auto sy = [&](double y) { return T + (1.0 - std::clamp(y, 0.0, 1.0)) * ph; };
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

  std::string s;
  s += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt2(W) + "\" height=\"" + fmt2(H) +
       "\" viewBox=\"0 0 " + fmt2(W) + " " + fmt2(H) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect x=\"0\" y=\"0\" width=\"" + fmt2(W) + "\" height=\"" + fmt2(H) + "\" fill=\"white\"/>\n";
  // axes and ticks
  s += "<g stroke=\"black\" stroke-width=\"1\">\n";
  s += "<line x1=\"" + fmt2(L) + "\" y1=\"" + fmt2(T + ph) + "\" x2=\"" + fmt2(L + pw) + "\" y2=\"" + fmt2(T + ph) +
       "\"/>\n";
  s += "<line x1=\"" + fmt2(L) + "\" y1=\"" + fmt2(T) + "\" x2=\"" + fmt2(L) + "\" y2=\"" + fmt2(T + ph) + "\"/>\n";
  s += "</g>\n<g fill=\"black\">\n";
  for (int i = 0; i <= 5; ++i) {
    const double v = i / 5.0;
    s += "<line x1=\"" + fmt2(L - 4) + "\" y1=\"" + fmt2(sy(v)) + "\" x2=\"" + fmt2(L) + "\" y2=\"" + fmt2(sy(v)) +
         "\" stroke=\"black\"/>\n";
    s += "<text x=\"" + fmt2(L - 8) + "\" y=\"" + fmt2(sy(v) + 4) + "\" text-anchor=\"end\">" + fmt2(v) + "</text>\n";
    const double xv = xlo + (xhi - xlo) * i / 5.0;
    s += "<line x1=\"" + fmt2(sx(xv)) + "\" y1=\"" + fmt2(T + ph) + "\" x2=\"" + fmt2(sx(xv)) + "\" y2=\"" +
         fmt2(T + ph + 4) + "\" stroke=\"black\"/>\n";
    s += "<text x=\"" + fmt2(sx(xv)) + "\" y=\"" + fmt2(T + ph + 18) + "\" text-anchor=\"middle\">" +
         detail::xml_escape(format_real(round_sig9(std::round(xv * 1e4) / 1e4))) + "</text>\n";
  }
  s += "<text x=\"" + fmt2(L + pw / 2) + "\" y=\"" + fmt2(H - 14) + "\" text-anchor=\"middle\">δ</text>\n";
  s += "<text x=\"16\" y=\"" + fmt2(T + ph / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
       fmt2(T + ph / 2) + ")\">AVX</text>\n";
  s += "</g>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* colour = palette[i % std::size(palette)];
    const auto& sr = series[i];
    if (sr.points.size() > 1) {
      std::string pts;
      for (const auto& p : sr.points) pts += (pts.empty() ? "" : " ") + fmt2(sx(p.delta)) + "," + fmt2(sy(p.avx(agg)));
      s += "<polyline fill=\"none\" stroke=\"" + std::string(colour) + "\" stroke-width=\"2\" points=\"" + pts +
           "\"/>\n";
    }
    for (const auto& p : sr.points)
      s += "<circle cx=\"" + fmt2(sx(p.delta)) + "\" cy=\"" + fmt2(sy(p.avx(agg))) + "\" r=\"3\" fill=\"" + colour +
           "\"/>\n";
    const double ly = T + 12 + 18.0 * static_cast<double>(i);
    s += "<line x1=\"" + fmt2(L + pw + 16) + "\" y1=\"" + fmt2(ly - 4) + "\" x2=\"" + fmt2(L + pw + 36) + "\" y2=\"" +
         fmt2(ly - 4) + "\" stroke=\"" + colour + "\" stroke-width=\"2\"/>\n";
    s += "<text x=\"" + fmt2(L + pw + 42) + "\" y=\"" + fmt2(ly) + "\">" + detail::xml_escape(sr.label()) +
         "</text>\n";
  }
  s += "<text x=\"" + fmt2(L + pw + 16) + "\" y=\"" + fmt2(H - 14) + "\">" + to_string(agg) + "</text>\n";
  s += "</svg>\n";
  return s;
}

}  // namespace advise
