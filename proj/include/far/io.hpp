#pragma once

// On-disk formats.
//
// Frame file (patches.bin, region rasters, upscaled fluxes):
//   bytes 0..7   ASCII magic "FARIDX01"
//   bytes 8..15  uint64 little-endian length N of the JSON index
//   next N bytes UTF-8 JSON index:
//                {"format", "version", "rows", "cols", "channels",
//                 "frames": [{"timestamp": ISO-8601, "quality_rle": [[code, run], ...], ...}], ...}
//   remainder    little-endian float32 frames, each row-major [rows][cols][channels]
//
// Quality codes: 0 valid, 1 cloud, 2 missing, 3 never observed.

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "far/data.hpp"
#include "far/errors.hpp"
#include "far/time.hpp"

namespace far {

namespace fs = std::filesystem;
using Json = nlohmann::json;

inline constexpr std::string_view kFrameMagic = "FARIDX01";
inline constexpr int kFrameFormatVersion = 1;
inline constexpr int kDatasetSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Little-endian helpers

inline void put_u64_le(std::ostream& os, std::uint64_t v) {
  std::array<char, 8> b{};
  for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b.data(), 8);
}

inline std::uint64_t get_u64_le(std::istream& is) {
  std::array<unsigned char, 8> b{};
  is.read(reinterpret_cast<char*>(b.data()), 8);
  if (!is) throw DataError("unexpected end of file");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
  return v;
}

inline void append_f32_le(std::string& out, double v) {
  const auto u = std::bit_cast<std::uint32_t>(static_cast<float>(v));
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
}

inline float read_f32_le(const unsigned char* p) {
  const std::uint32_t u = std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
                          (std::uint32_t(p[3]) << 24);
  return std::bit_cast<float>(u);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& path, std::string_view content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

inline Json read_json(const fs::path& path) {
  try {
    return Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    throw DataError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& path, const Json& j) { write_file(path, j.dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// Number formatting: shortest round-trip representation, empty for NaN.

inline std::string format_number(double v) {
  if (std::isnan(v)) return "";
  std::array<char, 64> buf{};
  const auto r = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), r.ptr);
}

inline double parse_number(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r' || s.back() == '\t')) s.remove_suffix(1);
  if (s.empty() || s == "NaN" || s == "nan" || s == "NA" || s == "-9999")
    return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw DataError("malformed number '" + std::string(s) + "'");
  return v;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i)
    if (i == line.size() || line[i] == ',') {
      out.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  return out;
}

/// Minimal CSV table: header plus rows of strings.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw DataError("CSV column '" + std::string(name) + "' not found");
  }

  std::string to_string() const {
    std::string out;
    auto emit = [&](const std::vector<std::string>& r) {
      for (std::size_t i = 0; i < r.size(); ++i) {
        if (i) out += ',';
        out += r[i];
      }
      out += '\n';
    };
    emit(header);
    for (const auto& r : rows) emit(r);
    return out;
  }
};

inline CsvTable parse_csv(std::string_view text) {
  CsvTable t;
  std::size_t pos = 0;
  bool first = true;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    std::vector<std::string> cells;
    for (auto c : split_csv_line(line)) cells.emplace_back(c);
    if (first) {
      t.header = std::move(cells);
      first = false;
    } else {
      if (cells.size() != t.header.size()) throw DataError("CSV row has wrong number of fields");
      t.rows.push_back(std::move(cells));
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Quality masks

inline Json encode_quality_rle(std::span<const PixelQuality> q) {
  Json runs = Json::array();
  std::size_t i = 0;
  while (i < q.size()) {
    std::size_t j = i;
    while (j < q.size() && q[j] == q[i]) ++j;
    runs.push_back(Json::array({static_cast<int>(q[i]), j - i}));
    i = j;
  }
  return runs;
}

inline std::vector<PixelQuality> decode_quality_rle(const Json& runs, std::size_t expected) {
  std::vector<PixelQuality> out;
  out.reserve(expected);
  for (const auto& run : runs) {
    const int code = run.at(0).get<int>();
    const auto n = run.at(1).get<std::size_t>();
    if (code < 0 || code > 3) throw DataError("invalid quality code");
    out.insert(out.end(), n, static_cast<PixelQuality>(code));
  }
  if (out.size() != expected) throw DataError("quality mask length does not match frame size");
  return out;
}

// ---------------------------------------------------------------------------
// Frame files

struct FrameMeta {
  Timestamp timestamp = 0;
  std::vector<PixelQuality> quality;
  Json extra = Json::object();  // merged into the frame's index entry
};

/// Streams frames to a temporary body file; finish() prepends the JSON index.
class FrameFileWriter {
 public:
  FrameFileWriter(fs::path path, std::string format, Index rows, Index cols, Index channels,
                  Json header_extra = Json::object())
      : path_(std::move(path)),
        body_path_(path_.string() + ".body.tmp"),
        format_(std::move(format)),
        rows_(rows),
        cols_(cols),
        channels_(channels),
        header_extra_(std::move(header_extra)) {
    if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
    body_.open(body_path_, std::ios::binary | std::ios::trunc);
    if (!body_) throw DataError("cannot write " + body_path_.string());
  }

  FrameFileWriter(const FrameFileWriter&) = delete;
  FrameFileWriter& operator=(const FrameFileWriter&) = delete;

  ~FrameFileWriter() {
    if (!finished_) {
      body_.close();
      std::error_code ec;
      fs::remove(body_path_, ec);
    }
  }

  void append(const FrameMeta& meta, std::span<const double> values) {
    if (values.size() != static_cast<std::size_t>(rows_ * cols_ * channels_))
      throw ShapeError("frame value count does not match header");
    if (meta.quality.size() != static_cast<std::size_t>(rows_ * cols_))
      throw ShapeError("frame mask size does not match header");
    Json entry = meta.extra;
    entry["timestamp"] = format_iso8601(meta.timestamp);
    entry["quality_rle"] = encode_quality_rle(meta.quality);
    frames_.push_back(std::move(entry));
    std::string buf;
    buf.reserve(values.size() * 4);
    for (double v : values) append_f32_le(buf, v);
    body_.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }

  void finish() {
    body_.close();
    Json index = header_extra_;
    index["format"] = format_;
    index["version"] = kFrameFormatVersion;
    index["rows"] = rows_;
    index["cols"] = cols_;
    index["channels"] = channels_;
    index["frames"] = frames_;
    const std::string js = index.dump();
    {
      std::ofstream out(path_, std::ios::binary | std::ios::trunc);
      if (!out) throw DataError("cannot write " + path_.string());
      out.write(kFrameMagic.data(), 8);
      put_u64_le(out, js.size());
      out.write(js.data(), static_cast<std::streamsize>(js.size()));
      std::ifstream body(body_path_, std::ios::binary);
      out << body.rdbuf();
      if (!out) throw DataError("write failed: " + path_.string());
    }
    fs::remove(body_path_);
    finished_ = true;
  }

 private:
  fs::path path_;
  fs::path body_path_;
  std::string format_;
  Index rows_, cols_, channels_;
  Json header_extra_;
  Json frames_ = Json::array();
  std::ofstream body_;
  bool finished_ = false;
};

class FrameFileReader {
 public:
  explicit FrameFileReader(const fs::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw DataError("cannot open " + path.string());
    std::array<char, 8> magic{};
    in_.read(magic.data(), 8);
    if (!in_ || std::string_view(magic.data(), 8) != kFrameMagic)
      throw DataError(path.string() + ": not a frame file");
    const auto n = get_u64_le(in_);
    std::string js(n, '\0');
    in_.read(js.data(), static_cast<std::streamsize>(n));
    if (!in_) throw DataError(path.string() + ": truncated index");
    try {
      index_ = Json::parse(js);
    } catch (const Json::parse_error& e) {
      throw DataError(path.string() + ": malformed index: " + e.what());
    }
    body_offset_ = 16 + n;
    rows_ = index_.at("rows").get<Index>();
    cols_ = index_.at("cols").get<Index>();
    channels_ = index_.at("channels").get<Index>();
  }

  const Json& index() const { return index_; }
  Index rows() const { return rows_; }
  Index cols() const { return cols_; }
  Index channels() const { return channels_; }
  std::size_t frame_count() const { return index_.at("frames").size(); }

  FrameMeta meta(std::size_t i) const {
    const auto& f = index_.at("frames").at(i);
    FrameMeta m;
    m.timestamp = parse_iso8601(f.at("timestamp").get<std::string>());
    m.quality = decode_quality_rle(f.at("quality_rle"), static_cast<std::size_t>(rows_ * cols_));
    m.extra = f;
    m.extra.erase("timestamp");
    m.extra.erase("quality_rle");
    return m;
  }

  std::vector<double> values(std::size_t i) {
    const auto n = static_cast<std::size_t>(rows_ * cols_ * channels_);
    std::vector<unsigned char> buf(n * 4);
    in_.clear();
    in_.seekg(static_cast<std::streamoff>(body_offset_ + i * n * 4));
    in_.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!in_) throw DataError(path_.string() + ": truncated frame data");
    std::vector<double> out(n);
    for (std::size_t k = 0; k < n; ++k) out[k] = static_cast<double>(read_f32_le(buf.data() + 4 * k));
    return out;
  }

 private:
  fs::path path_;
  std::ifstream in_;
  Json index_;
  std::uint64_t body_offset_ = 0;
  Index rows_ = 0, cols_ = 0, channels_ = 0;
};

// ---------------------------------------------------------------------------
// Dataset directory

inline constexpr std::array<std::string_view, 9> kSampleColumns = {"timestamp", "SW_IN", "TA", "RH", "WD",
                                                                   "WS",        "USTAR", "H",  "FC"};

inline void write_patches(const fs::path& path, std::span<const ScenePatch> patches, Index rows, Index cols,
                          Index bands) {
  FrameFileWriter w(path, "far-patches", rows, cols, bands);
  for (const auto& p : patches) {
    FrameMeta m{p.timestamp, p.quality, Json::object()};
    m.extra["angles"] = p.angles;
    w.append(m, p.values);
  }
  w.finish();
}

inline std::vector<ScenePatch> read_patches(const fs::path& path, double pixel_size_m) {
  FrameFileReader r(path);
  std::vector<ScenePatch> out;
  for (std::size_t i = 0; i < r.frame_count(); ++i) {
    auto meta = r.meta(i);
    ScenePatch p;
    p.rows = r.rows();
    p.cols = r.cols();
    p.bands = r.channels();
    p.values = r.values(i);
    p.quality = std::move(meta.quality);
    p.timestamp = meta.timestamp;
    p.angles = meta.extra.at("angles").get<std::array<double, 4>>();
    p.pixel_size_m = pixel_size_m;
    out.push_back(std::move(p));
  }
  return out;
}

inline std::string samples_to_csv(std::span<const HalfHourSample> samples) {
  CsvTable t;
  t.header.assign(kSampleColumns.begin(), kSampleColumns.end());
  for (const auto& s : samples)
    t.rows.push_back({format_iso8601(s.timestamp), format_number(s.drivers.sw_in), format_number(s.drivers.ta),
                      format_number(s.drivers.rh), format_number(s.fp.wd), format_number(s.fp.ws),
                      format_number(s.fp.ustar), format_number(s.fp.h), format_number(s.target_fc)});
  return t.to_string();
}

/// TA feeds both the drivers and the footprint vector; HEIGHT comes from the site table.
inline std::vector<HalfHourSample> samples_from_csv(std::string_view text, double tower_height) {
  const CsvTable t = parse_csv(text);
  std::array<std::size_t, kSampleColumns.size()> col{};
  for (std::size_t k = 0; k < kSampleColumns.size(); ++k) col[k] = t.column(kSampleColumns[k]);
  std::vector<HalfHourSample> out;
  out.reserve(t.rows.size());
  for (const auto& r : t.rows) {
    HalfHourSample s;
    s.timestamp = parse_iso8601(r[col[0]]);
    s.drivers.sw_in = parse_number(r[col[1]]);
    s.drivers.ta = parse_number(r[col[2]]);
    s.drivers.rh = parse_number(r[col[3]]);
    s.fp.wd = parse_number(r[col[4]]);
    s.fp.ws = parse_number(r[col[5]]);
    s.fp.ustar = parse_number(r[col[6]]);
    s.fp.h = parse_number(r[col[7]]);
    s.target_fc = parse_number(r[col[8]]);
    s.fp.ta = s.drivers.ta;
    s.fp.height = tower_height;
    out.push_back(s);
  }
  return out;
}

inline void write_dataset(const fs::path& dir, const Dataset& ds) {
  fs::create_directories(dir);
  Json manifest;
  manifest["schema_version"] = kDatasetSchemaVersion;
  manifest["grid"] = {{"rows", ds.rows}, {"cols", ds.cols}};
  manifest["pixel_size_m"] = ds.pixel_size_m;
  manifest["band_names"] = ds.band_names;
  manifest["angle_names"] = std::vector<std::string>(kAngleNames.begin(), kAngleNames.end());
  Json sites = Json::array();
  for (const auto& s : ds.sites) {
    sites.push_back({{"site_id", s.site_id},
                     {"ecosystem", s.ecosystem},
                     {"tower_height_m", s.tower_height_m},
                     {"tower_row", s.tower_row},
                     {"tower_col", s.tower_col},
                     {"samples", s.site_id + "/samples.csv"},
                     {"patches", s.site_id + "/patches.bin"}});
    write_file(dir / s.site_id / "samples.csv", samples_to_csv(s.samples));
    write_patches(dir / s.site_id / "patches.bin", s.patches, ds.rows, ds.cols, ds.band_count());
  }
  manifest["sites"] = sites;
  write_json(dir / "manifest.json", manifest);
}

/// Loads a dataset and resolves each sample's patch reference. Samples that
/// precede the first patch cannot be resolved and are dropped with a warning.
inline Dataset read_dataset(const fs::path& dir) {
  const Json manifest = read_json(dir / "manifest.json");
  try {
    if (manifest.at("schema_version").get<int>() != kDatasetSchemaVersion)
      throw DataError("unsupported dataset schema version");
    Dataset ds;
    ds.rows = manifest.at("grid").at("rows").get<Index>();
    ds.cols = manifest.at("grid").at("cols").get<Index>();
    ds.pixel_size_m = manifest.at("pixel_size_m").get<double>();
    ds.band_names = manifest.at("band_names").get<std::vector<std::string>>();
    for (const auto& js : manifest.at("sites")) {
      SiteDataset s;
      s.site_id = js.at("site_id").get<std::string>();
      s.ecosystem = js.at("ecosystem").get<std::string>();
      s.tower_height_m = js.at("tower_height_m").get<double>();
      s.tower_row = js.value("tower_row", ds.rows / 2);
      s.tower_col = js.value("tower_col", ds.cols / 2);
      if (!(s.tower_height_m > 0.0)) throw DataError("site " + s.site_id + ": tower height must be positive");
      s.patches = read_patches(dir / js.at("patches").get<std::string>(), ds.pixel_size_m);
      for (const auto& p : s.patches)
        if (p.rows != ds.rows || p.cols != ds.cols || p.bands != ds.band_count())
          throw DataError("site " + s.site_id + ": patch shape does not match manifest");
      for (std::size_t i = 1; i < s.patches.size(); ++i)
        if (s.patches[i].timestamp < s.patches[i - 1].timestamp)
          throw DataError("site " + s.site_id + ": patches not sorted by time");
      auto samples = samples_from_csv(read_file(dir / js.at("samples").get<std::string>()), s.tower_height_m);
      std::size_t dropped = 0;
      for (auto& smp : samples) {
        const auto ref = latest_patch_at(s.patches, smp.timestamp);
        if (!ref) {
          ++dropped;
          continue;
        }
        smp.patch_ref = *ref;
        if (!s.samples.empty() && smp.timestamp < s.samples.back().timestamp)
          throw DataError("site " + s.site_id + ": samples not sorted by time");
        s.samples.push_back(smp);
      }
      if (dropped > 0)
        std::cerr << "warning: site " << s.site_id << ": " << dropped << " samples precede the first patch\n";
      ds.sites.push_back(std::move(s));
    }
    return ds;
  } catch (const Json::exception& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }
}

inline Json to_json(const RejectionReport& r) {
  return {{"input", r.input},
          {"kept", r.kept},
          {"rejected", r.rejected()},
          {"rules",
           {{"missing_field", r.missing_field},
            {"fc_percentile", r.fc_percentile},
            {"negative_sw_in", r.negative_sw_in},
            {"nighttime_drawdown", r.nighttime_drawdown}}},
          {"fc_bounds", {r.fc_lower_bound, r.fc_upper_bound}}};
}

}  // namespace far
