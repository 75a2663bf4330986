#pragma once

// On-disk artifacts of an explanation run:
//   maps/score_<i>.png, maps/score_<i>_overlay.png, maps/raw.atb,
//   maps/index.json and optionally maps/gradcam.png.
//
// raw.atb layout (little endian): "ATB1", u32 count, then per map
// i32 score, u32 rows, u32 cols, rows*cols f64.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "advise/common.hpp"
#include "advise/image.hpp"
#include "advise/saliency.hpp"

namespace advise {

static_assert(std::endian::native == std::endian::little, "raw.atb writer assumes a little-endian host");

struct RawMap {
  int score = 0;
  Map2 map;
};

inline void write_raw_maps(const std::filesystem::path& path, const std::vector<RawMap>& maps) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  auto put = [&](const auto& v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); };
  out.write("ATB1", 4);
  put(static_cast<std::uint32_t>(maps.size()));
  for (const auto& m : maps) {
    put(static_cast<std::int32_t>(m.score));
    put(static_cast<std::uint32_t>(m.map.rows));
    put(static_cast<std::uint32_t>(m.map.cols));
    out.write(reinterpret_cast<const char*>(m.map.data.data()),
              static_cast<std::streamsize>(m.map.data.size() * sizeof(double)));
  }
  if (!out) throw Error("short write to " + path.string());
}

inline std::vector<RawMap> read_raw_maps(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  auto get = [&](auto& v) {
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw ValidationError(path.string() + ": truncated");
  };
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "ATB1", 4) != 0) throw ValidationError(path.string() + ": bad magic");
  std::uint32_t count = 0;
  get(count);
  std::vector<RawMap> out(count);
  for (auto& m : out) {
    std::int32_t score = 0;
    std::uint32_t rows = 0, cols = 0;
    get(score);
    get(rows);
    get(cols);
    m.score = score;
    m.map = Map2(rows, cols);
    if (!in.read(reinterpret_cast<char*>(m.map.data.data()),
                 static_cast<std::streamsize>(m.map.data.size() * sizeof(double))))
      throw ValidationError(path.string() + ": truncated map data");
  }
  return out;
}

inline nlohmann::ordered_json map_index_json(const SaliencyMapSet& set, bool gradcam) {
  nlohmann::ordered_json j;
  j["relu_applied"] = set.relu_applied;
  auto groups = nlohmann::ordered_json::array();
  for (const auto& m : set.maps)
    groups.push_back({{"score", m.score},
                      {"units", m.units.size()},
                      {"heatmap", "score_" + std::to_string(m.score) + ".png"},
                      {"overlay", "score_" + std::to_string(m.score) + "_overlay.png"}});
  j["groups"] = std::move(groups);
  j["gradcam"] = gradcam ? nlohmann::ordered_json("gradcam.png") : nlohmann::ordered_json(nullptr);
  j["selected"] = set.selected ? nlohmann::ordered_json(*set.selected) : nlohmann::ordered_json(nullptr);
  return j;
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

/// Writes heatmaps, overlays, raw maps and index.json into `dir`.
inline void write_map_artifacts(const std::filesystem::path& dir, const SaliencyMapSet& set, const Image& image,
                                const std::optional<SaliencyMap>& gradcam) {
  std::filesystem::create_directories(dir);
  std::vector<RawMap> raw;
  for (const auto& m : set.maps) {
    const std::string stem = "score_" + std::to_string(m.score);
    write_heatmap_png(dir / (stem + ".png"), m.normalized);
    write_png(dir / (stem + "_overlay.png"), overlay(image, m.normalized));
    raw.push_back({m.score, m.raw});
  }
  write_raw_maps(dir / "raw.atb", raw);
  if (gradcam) write_heatmap_png(dir / "gradcam.png", gradcam->normalized);
  write_json_file(dir / "index.json", map_index_json(set, gradcam.has_value()));
}

}  // namespace advise
