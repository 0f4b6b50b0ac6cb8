#pragma once

// Checkpoint layout:
//   bytes 0..7   ASCII magic "FARCKPT1"
//   bytes 8..15  uint64 little-endian JSON header length N
//   next N bytes JSON header (architecture, lambda, entropy sign, seed,
//                normalisation statistics, format version)
//   remainder    float32 little-endian parameters: each network in header
//                order ("networks"), each layer in order, weight row-major
//                [out][in] followed by bias [out]
//
// Parameters are rounded to float32 on save, so a loaded model reproduces the
// saved one's predictions to single precision.

#include <array>
#include <span>
#include <string>
#include <vector>

#include "far/io.hpp"
#include "far/model.hpp"
#include "far/numerics.hpp"

namespace far {

inline constexpr std::string_view kCheckpointMagic = "FARCKPT1";
inline constexpr int kCheckpointFormatVersion = 1;

inline Json to_json(const MlpShape& s) {
  return {{"input_dim", s.input_dim},
          {"hidden_width", s.hidden_width},
          {"hidden_layers", s.hidden_layers},
          {"output_dim", s.output_dim}};
}

inline MlpShape mlp_shape_from_json(const Json& j) {
  return {j.at("input_dim").get<Index>(), j.at("hidden_width").get<Index>(), j.at("hidden_layers").get<Index>(),
          j.at("output_dim").get<Index>()};
}

inline Json to_json(const FeatureStats& s) {
  return {{"mean", s.mean}, {"std", s.std}, {"clamped", s.clamped}};
}

inline FeatureStats feature_stats_from_json(const Json& j) {
  FeatureStats s;
  s.mean = j.at("mean").get<std::vector<double>>();
  s.std = j.at("std").get<std::vector<double>>();
  s.clamped = j.value("clamped", std::vector<bool>(s.mean.size(), false));
  if (s.std.size() != s.mean.size() || s.clamped.size() != s.mean.size())
    throw DataError("normalisation statistics have inconsistent lengths");
  return s;
}

inline Json to_json(const Normalization& n) {
  return {{"bands", to_json(n.bands)},
          {"angles", to_json(n.angles)},
          {"drivers", to_json(n.drivers)},
          {"footprint", to_json(n.footprint)},
          {"target", to_json(n.target)}};
}

inline Normalization normalization_from_json(const Json& j) {
  return {feature_stats_from_json(j.at("bands")), feature_stats_from_json(j.at("angles")),
          feature_stats_from_json(j.at("drivers")), feature_stats_from_json(j.at("footprint")),
          feature_stats_from_json(j.at("target"))};
}

/// Writes header + float32 parameter blob. `header["networks"]` is filled in.
inline void write_checkpoint_file(const fs::path& path, Json header, std::span<const Mlp* const> networks) {
  header["format"] = "far-checkpoint";
  header["format_version"] = kCheckpointFormatVersion;
  header["parameter_layout"] =
      "networks in listed order; per layer weight row-major [out][in] then bias [out]; float32 little-endian";
  Json nets = Json::array();
  std::string blob;
  std::size_t count = 0;
  for (const Mlp* m : networks) {
    nets.push_back(to_json(m->shape()));
    for (const auto& l : m->layers()) {
      for (Index r = 0; r < l.weight.rows(); ++r)
        for (Index c = 0; c < l.weight.cols(); ++c) append_f32_le(blob, l.weight(r, c));
      for (Index r = 0; r < l.bias.size(); ++r) append_f32_le(blob, l.bias(r));
    }
    count += m->parameter_count();
  }
  header["networks"] = nets;
  header["parameter_count"] = count;
  const std::string js = header.dump();
  std::string out;
  out.append(kCheckpointMagic);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(js.size()) >> (8 * i)) & 0xFF));
  out += js;
  out += blob;
  write_file(path, out);
}

struct CheckpointContents {
  Json header;
  std::vector<Mlp> networks;
};

inline CheckpointContents read_checkpoint_file(const fs::path& path) {
  const std::string raw = read_file(path);
  if (raw.size() < 16 || std::string_view(raw.data(), 8) != kCheckpointMagic)
    throw DataError(path.string() + ": not a checkpoint file");
  std::uint64_t n = 0;
  for (int i = 7; i >= 0; --i) n = (n << 8) | static_cast<unsigned char>(raw[8 + static_cast<std::size_t>(i)]);
  if (16 + n > raw.size()) throw DataError(path.string() + ": truncated header");
  CheckpointContents c;
  try {
    c.header = Json::parse(raw.substr(16, n));
    if (c.header.at("format_version").get<int>() != kCheckpointFormatVersion)
      throw DataError("unsupported checkpoint format version");
    const auto* p = reinterpret_cast<const unsigned char*>(raw.data()) + 16 + n;
    const auto* end = reinterpret_cast<const unsigned char*>(raw.data()) + raw.size();
    for (const auto& js : c.header.at("networks")) {
      Mlp m = Mlp::zeros(mlp_shape_from_json(js));
      for (auto& l : m.layers()) {
        const auto need = static_cast<std::ptrdiff_t>(4 * (l.weight.size() + l.bias.size()));
        if (end - p < need) throw DataError(path.string() + ": truncated parameter blob");
        for (Index r = 0; r < l.weight.rows(); ++r)
          for (Index col = 0; col < l.weight.cols(); ++col, p += 4) l.weight(r, col) = read_f32_le(p);
        for (Index r = 0; r < l.bias.size(); ++r, p += 4) l.bias(r) = read_f32_le(p);
      }
      if (!m.all_finite()) throw NumericError(path.string() + ": non-finite parameter");
      c.networks.push_back(std::move(m));
    }
    if (p != end) throw DataError(path.string() + ": trailing bytes after parameter blob");
  } catch (const Json::exception& e) {
    throw DataError(path.string() + ": malformed checkpoint header: " + e.what());
  }
  return c;
}

inline void save_checkpoint(const fs::path& path, const FarModel& m) {
  Json h;
  h["kind"] = "far";
  h["grid"] = {{"rows", m.rows}, {"cols", m.cols}};
  h["bands"] = m.bands();
  h["lambda"] = m.lambda;
  h["entropy_sign"] = to_string(m.entropy_sign);
  h["seed"] = m.seed;
  h["normalization"] = to_json(m.normalization);
  const std::array<const Mlp*, 2> nets = {&m.flux_mlp, &m.footprint_mlp};
  write_checkpoint_file(path, h, nets);
}

inline FarModel load_checkpoint(const fs::path& path) {
  auto c = read_checkpoint_file(path);
  try {
    if (c.header.at("kind").get<std::string>() != "far") throw DataError(path.string() + ": not a FAR checkpoint");
    if (c.networks.size() != 2) throw DataError(path.string() + ": expected two networks");
    FarModel m;
    m.flux_mlp = std::move(c.networks[0]);
    m.footprint_mlp = std::move(c.networks[1]);
    m.rows = c.header.at("grid").at("rows").get<Index>();
    m.cols = c.header.at("grid").at("cols").get<Index>();
    m.lambda = c.header.at("lambda").get<double>();
    m.entropy_sign = parse_entropy_sign(c.header.at("entropy_sign").get<std::string>());
    m.seed = c.header.at("seed").get<std::uint64_t>();
    m.normalization = normalization_from_json(c.header.at("normalization"));
    m.validate();
    return m;
  } catch (const Json::exception& e) {
    throw DataError(path.string() + ": malformed checkpoint header: " + e.what());
  }
}

}  // namespace far
