#pragma once

// Directory-based tensor bundle: manifest.json plus one little-endian f32
// blob per tensor. A bundle carries the activation A[U,V,K], the gradient
// dy^c/dA with the same shape, and optionally the softmax vector.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "advise/common.hpp"

namespace advise {

inline constexpr const char* kBundleVersion = "advise-bundle/1";

struct TensorDescriptor {
  std::string name;
  std::string dtype = "f32";
  std::string byte_order = "LE";
  std::vector<std::int64_t> shape;
  std::string file;

  bool operator==(const TensorDescriptor&) const = default;
};

struct BundleManifest {
  std::string version = kBundleVersion;
  std::string model;
  std::string layer;
  std::string image;
  std::array<int, 2> input_size{0, 0};  // [H, W]
  int class_index = 0;
  double class_score = 0.0;
  std::optional<std::array<int, 5>> top5;
  std::vector<TensorDescriptor> tensors;

  bool operator==(const BundleManifest&) const = default;
};

struct TensorBundle {
  BundleManifest manifest;
  Tensor3 activation;
  Tensor3 gradient;
  std::optional<std::vector<float>> logits;

  std::size_t rows() const { return activation.rows; }
  std::size_t cols() const { return activation.cols; }
  std::size_t units() const { return activation.units; }

  bool operator==(const TensorBundle&) const = default;
};

namespace detail {

inline void check_finite(const std::vector<float>& v, const std::string& name) {
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!std::isfinite(v[i]))
      throw ValidationError("non-finite value in tensor '" + name + "' at flat index " + std::to_string(i));
}

inline std::uint32_t to_le(std::uint32_t x) {
  if constexpr (std::endian::native == std::endian::little) return x;
  return ((x & 0xffu) << 24) | ((x & 0xff00u) << 8) | ((x >> 8) & 0xff00u) | (x >> 24);
}

inline void write_blob(const std::filesystem::path& path, const std::vector<float>& values) {
  std::vector<unsigned char> bytes(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint32_t le = to_le(std::bit_cast<std::uint32_t>(values[i]));
    std::memcpy(bytes.data() + 4 * i, &le, 4);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ValidationError("write failed: " + path.string());
}

inline std::vector<float> read_blob(const std::filesystem::path& path, std::size_t expected_elems,
                                    const std::string& name) {
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec) throw ValidationError("missing tensor blob for '" + name + "': " + path.string());
  if (size % 4 != 0 || size / 4 != expected_elems)
    throw ValidationError("shape/byte-count mismatch for tensor '" + name + "': shape declares " +
                          std::to_string(expected_elems) + " elements, blob holds " + std::to_string(size) +
                          " bytes (" + path.string() + ")");
  std::vector<unsigned char> bytes(size);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open tensor blob: " + path.string());
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw ValidationError("short read: " + path.string());
  std::vector<float> out(expected_elems);
  for (std::size_t i = 0; i < expected_elems; ++i) {
    std::uint32_t le;
    std::memcpy(&le, bytes.data() + 4 * i, 4);
    out[i] = std::bit_cast<float>(to_le(le));
  }
  return out;
}

inline std::size_t element_count(const std::vector<std::int64_t>& shape, const std::string& name) {
  std::size_t n = 1;
  for (auto d : shape) {
    if (d < 1) throw ValidationError("tensor '" + name + "' has non-positive dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

}  // namespace detail

/// Checks every bundle invariant; throws ValidationError naming the offender.
inline void validate_bundle(const TensorBundle& b) {
  const auto& m = b.manifest;
  if (m.version != kBundleVersion)
    throw ValidationError("unsupported bundle version '" + m.version + "', expected " + kBundleVersion);
  if (b.activation.empty()) throw ValidationError("bundle has no activation tensor (activation required)");
  if (b.gradient.empty()) throw ValidationError("bundle has no gradient tensor");
  const auto& a = b.activation;
  const auto& g = b.gradient;
  if (a.rows < 1 || a.cols < 1 || a.units < 1 || a.data.size() != a.rows * a.cols * a.units)
    throw ValidationError("activation has an invalid shape");
  if (g.rows != a.rows || g.cols != a.cols || g.units != a.units || g.data.size() != a.data.size())
    throw ValidationError("activation and gradient shapes differ");
  detail::check_finite(a.data, "activation");
  detail::check_finite(g.data, "gradient");
  if (m.input_size[0] < 1 || m.input_size[1] < 1) throw ValidationError("input_size must be positive");
  if (!(m.class_score > 0.0 && m.class_score < 1.0))
    throw ValidationError("class_score must lie in (0,1), got " + format_real(m.class_score));
  if (m.class_index < 0) throw ValidationError("class_index must be non-negative");
  if (b.logits) {
    const auto& l = *b.logits;
    if (l.empty()) throw ValidationError("logits tensor is empty");
    detail::check_finite(l, "logits");
    for (std::size_t i = 0; i < l.size(); ++i)
      if (l[i] < 0.0f || l[i] > 1.0f)
        throw ValidationError("logits entry " + std::to_string(i) + " outside [0,1]");
    if (static_cast<std::size_t>(m.class_index) >= l.size())
      throw ValidationError("class_index out of range of logits");
    if (std::abs(static_cast<double>(l[m.class_index]) - m.class_score) > 1e-6)
      throw ValidationError("logits[class_index] = " + format_real(l[m.class_index]) +
                            " inconsistent with class_score = " + format_real(m.class_score));
  }
}

inline nlohmann::ordered_json manifest_to_json(const BundleManifest& m) {
  nlohmann::ordered_json j;
  j["version"] = m.version;
  j["model"] = m.model;
  j["layer"] = m.layer;
  j["image"] = m.image;
  j["input_size"] = {m.input_size[0], m.input_size[1]};
  j["class_index"] = m.class_index;
  j["class_score"] = m.class_score;
  if (m.top5) j["top5"] = *m.top5;
  auto tensors = nlohmann::ordered_json::array();
  for (const auto& t : m.tensors) {
    nlohmann::ordered_json tj;
    tj["name"] = t.name;
    tj["dtype"] = t.dtype;
    tj["byte_order"] = t.byte_order;
    tj["shape"] = t.shape;
    tj["file"] = t.file;
    tensors.push_back(std::move(tj));
  }
  j["tensors"] = std::move(tensors);
  return j;
}

inline BundleManifest manifest_from_json(const nlohmann::json& j, const std::string& where) {
  BundleManifest m;
  try {
    m.version = j.at("version").get<std::string>();
    if (m.version != kBundleVersion)
      throw ValidationError("version mismatch in " + where + ": '" + m.version + "', expected " + kBundleVersion);
    m.model = j.at("model").get<std::string>();
    m.layer = j.at("layer").get<std::string>();
    m.image = j.at("image").get<std::string>();
    const auto size = j.at("input_size").get<std::vector<int>>();
    if (size.size() != 2) throw ValidationError("input_size must be [H, W] in " + where);
    m.input_size = {size[0], size[1]};
    m.class_index = j.at("class_index").get<int>();
    m.class_score = j.at("class_score").get<double>();
    if (j.contains("top5") && !j["top5"].is_null()) {
      const auto t5 = j["top5"].get<std::vector<int>>();
      if (t5.size() != 5) throw ValidationError("top5 must hold exactly 5 entries in " + where);
      m.top5 = std::array<int, 5>{t5[0], t5[1], t5[2], t5[3], t5[4]};
    }
    for (const auto& tj : j.at("tensors")) {
      TensorDescriptor t;
      t.name = tj.at("name").get<std::string>();
      t.dtype = tj.at("dtype").get<std::string>();
      t.byte_order = tj.at("byte_order").get<std::string>();
      t.shape = tj.at("shape").get<std::vector<std::int64_t>>();
      t.file = tj.at("file").get<std::string>();
      m.tensors.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed manifest " + where + ": " + e.what());
  }
  return m;
}

/// Loads and fully validates a bundle directory.
inline TensorBundle read_bundle(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw ValidationError("missing manifest: " + manifest_path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("cannot parse " + manifest_path.string() + ": " + e.what());
  }
  TensorBundle b;
  b.manifest = manifest_from_json(j, manifest_path.string());

  bool have_activation = false, have_gradient = false;
  for (const auto& t : b.manifest.tensors) {
    if (t.dtype != "f32") throw ValidationError("tensor '" + t.name + "' has unsupported dtype " + t.dtype);
    if (t.byte_order != "LE") throw ValidationError("tensor '" + t.name + "' has unsupported byte order");
    const std::size_t n = detail::element_count(t.shape, t.name);
    auto values = detail::read_blob(dir / t.file, n, t.name);
    if (t.name == "activation" || t.name == "gradient") {
      if (t.shape.size() != 3) throw ValidationError("tensor '" + t.name + "' must be rank 3 [U,V,K]");
      Tensor3 tensor;
      tensor.rows = static_cast<std::size_t>(t.shape[0]);
      tensor.cols = static_cast<std::size_t>(t.shape[1]);
      tensor.units = static_cast<std::size_t>(t.shape[2]);
      tensor.data = std::move(values);
      (t.name == "activation" ? b.activation : b.gradient) = std::move(tensor);
      (t.name == "activation" ? have_activation : have_gradient) = true;
    } else if (t.name == "logits") {
      if (t.shape.size() != 1) throw ValidationError("tensor 'logits' must be rank 1");
      b.logits = std::move(values);
    } else {
      throw ValidationError("unknown tensor name '" + t.name + "' in " + manifest_path.string());
    }
  }
  if (!have_activation) throw ValidationError("bundle has no activation tensor (activation required): " + dir.string());
  if (!have_gradient) throw ValidationError("bundle has no gradient tensor: " + dir.string());
  validate_bundle(b);
  return b;
}

/// Fills manifest.tensors with the descriptors write_bundle will emit.
inline void describe_tensors(TensorBundle& b) {
  auto& ts = b.manifest.tensors;
  ts.clear();
  auto shape3 = [](const Tensor3& t) {
    return std::vector<std::int64_t>{static_cast<std::int64_t>(t.rows), static_cast<std::int64_t>(t.cols),
                                     static_cast<std::int64_t>(t.units)};
  };
  ts.push_back({"activation", "f32", "LE", shape3(b.activation), "activation.bin"});
  ts.push_back({"gradient", "f32", "LE", shape3(b.gradient), "gradient.bin"});
  if (b.logits)
    ts.push_back({"logits", "f32", "LE", {static_cast<std::int64_t>(b.logits->size())}, "logits.bin"});
}

/// Validates, then writes manifest.json and blobs into `dir` (created if needed).
inline void write_bundle(const TensorBundle& bundle, const std::filesystem::path& dir) {
  TensorBundle b = bundle;
  b.manifest.version = kBundleVersion;
  validate_bundle(b);
  describe_tensors(b);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ValidationError("cannot create bundle directory " + dir.string() + ": " + ec.message());
  detail::write_blob(dir / "activation.bin", b.activation.data);
  detail::write_blob(dir / "gradient.bin", b.gradient.data);
  if (b.logits) detail::write_blob(dir / "logits.bin", *b.logits);
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw ValidationError("cannot write manifest in " + dir.string());
  out << manifest_to_json(b.manifest).dump(2) << "\n";
}

}  // namespace advise
