#pragma once

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "stagematch/cascade.hpp"
#include "stagematch/core.hpp"
#include "stagematch/error.hpp"
#include "stagematch/lda.hpp"

// Persistence. Template and dataset payloads are binary (large, scan-hot);
// models and projections are structured text (small, diff-able), with
// doubles written in shortest round-trip decimal form so parsed values are
// bit-equal to what was written. All multi-byte values are little-endian
// regardless of host. Writers are atomic: write to a temp file in the same
// directory, then rename over the target.

namespace stagematch {

inline constexpr std::uint16_t kStoreVersion = 1;
inline constexpr char kTemplateMagic[4] = {'C', 'T', 'P', 'L'};
inline constexpr char kDatasetMagic[4] = {'C', 'D', 'S', 'T'};
inline constexpr std::string_view kModelHeader = "stagematch-model v1";
inline constexpr std::string_view kProjectionHeader =
    "stagematch-projection v1";

namespace detail {

inline void append_bytes(std::string& out, const void* p, std::size_t n) {
  out.append(static_cast<const char*>(p), n);
}

inline void append_u16(std::string& out, std::uint16_t v) {
  char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  append_bytes(out, b, 2);
}

inline void append_u32(std::string& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  append_bytes(out, b, 4);
}

inline void append_u64(std::string& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  append_bytes(out, b, 8);
}

inline void append_f32(std::string& out, float v) {
  append_u32(out, std::bit_cast<std::uint32_t>(v));
}

inline void append_f64(std::string& out, double v) {
  append_u64(out, std::bit_cast<std::uint64_t>(v));
}

// Bounds-checked little-endian reads over a loaded file image.
class Cursor {
 public:
  Cursor(std::string_view data, std::string label)
      : data_(data), label_(std::move(label)) {}

  std::size_t remaining() const noexcept { return data_.size() - offset_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      raise(ErrorKind::format, label_ + ": truncated " + what);
    }
  }

  void read_raw(void* dst, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(dst, data_.data() + offset_, n);
    offset_ += n;
  }

  std::uint16_t read_u16(const char* what) {
    unsigned char b[2];
    read_raw(b, 2, what);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }

  std::uint32_t read_u32(const char* what) {
    unsigned char b[4];
    read_raw(b, 4, what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }

  std::uint64_t read_u64(const char* what) {
    unsigned char b[8];
    read_raw(b, 8, what);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }

  float read_f32(const char* what) {
    return std::bit_cast<float>(read_u32(what));
  }

  double read_f64(const char* what) {
    return std::bit_cast<double>(read_u64(what));
  }

  std::string read_string(std::size_t n, const char* what) {
    need(n, what);
    std::string s(data_.substr(offset_, n));
    offset_ += n;
    return s;
  }

  void expect_end() const {
    if (remaining() != 0) {
      raise(ErrorKind::format,
            label_ + ": trailing bytes after payload (" +
                std::to_string(remaining()) + ")");
    }
  }

  const std::string& label() const noexcept { return label_; }

 private:
  std::string_view data_;
  std::string label_;
  std::size_t offset_ = 0;
};

inline std::string load_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    raise(ErrorKind::io, "cannot open '" + path.string() + "' for reading");
  }
  std::string data;
  in.seekg(0, std::ios::end);
  auto size = in.tellg();
  if (size < 0) {
    raise(ErrorKind::io, "cannot determine size of '" + path.string() + "'");
  }
  data.resize(static_cast<std::size_t>(size));
  in.seekg(0, std::ios::beg);
  in.read(data.data(), size);
  if (!in) {
    raise(ErrorKind::io, "failed reading '" + path.string() + "'");
  }
  return data;
}

inline std::uint64_t store_file(const std::filesystem::path& path,
                                std::string_view contents) {
  std::filesystem::path temp = path;
  temp += ".tmp";
  {
    std::ofstream out(temp, std::ios::binary | std::ios::trunc);
    if (!out) {
      raise(ErrorKind::io, "cannot open '" + temp.string() + "' for writing");
    }
    out.write(contents.data(),
              static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(temp, ec);
      raise(ErrorKind::io, "failed writing '" + temp.string() + "'");
    }
  }
  std::error_code ec;
  std::filesystem::rename(temp, path, ec);
  if (ec) {
    std::error_code ec2;
    std::filesystem::remove(temp, ec2);
    raise(ErrorKind::io, "failed renaming '" + temp.string() + "' to '" +
                             path.string() + "': " + ec.message());
  }
  return contents.size();
}

inline std::string format_double(double v) {
  char buf[64];
  auto [end, errc] = std::to_chars(buf, buf + sizeof(buf), v);
  if (errc != std::errc()) {
    raise(ErrorKind::invalid_argument, "cannot format double");
  }
  return std::string(buf, end);
}

inline double parse_double(std::string_view token, const std::string& where) {
  double v = 0.0;
  auto [ptr, errc] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (errc != std::errc() || ptr != token.data() + token.size()) {
    raise(ErrorKind::format,
          where + ": malformed number '" + std::string(token) + "'");
  }
  return v;
}

inline std::uint64_t parse_u64(std::string_view token,
                               const std::string& where) {
  std::uint64_t v = 0;
  auto [ptr, errc] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (errc != std::errc() || ptr != token.data() + token.size()) {
    raise(ErrorKind::format,
          where + ": malformed integer '" + std::string(token) + "'");
  }
  return v;
}

inline std::vector<std::string_view> split_tokens(std::string_view line) {
  std::vector<std::string_view> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
    if (i > start) tokens.push_back(line.substr(start, i - start));
  }
  return tokens;
}

inline std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) {
      if (start < text.size()) lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return lines;
}

inline void append_comment_lines(std::string& out,
                                 std::span<const std::string> comments) {
  for (const std::string& c : comments) {
    if (c.find('\n') != std::string::npos) {
      raise(ErrorKind::invalid_argument, "comment contains a newline");
    }
    out += "# ";
    out += c;
    out += '\n';
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Template files ("CTPL"): magic, u16 version, u32 dim, u64 count, id table
// of length-prefixed UTF-8 strings, then count x dim little-endian f32.

inline std::uint64_t write_templates(const std::filesystem::path& path,
                                     const std::vector<Template>& templates) {
  std::size_t dim = templates.empty() ? 0 : templates[0].dim();
  for (const Template& t : templates) {
    if (t.dim() != dim) {
      raise(ErrorKind::dimension_mismatch,
            "write_templates: mixed dimensions (" + std::to_string(t.dim()) +
                " vs " + std::to_string(dim) + ")");
    }
    if (!is_unit_norm(std::span<const float>(t.features),
                      kStoredNormTolerance)) {
      raise(ErrorKind::normalization,
            "write_templates: template '" + t.id + "' is not unit-normalized");
    }
  }

  std::string out;
  out.reserve(18 + templates.size() * (16 + dim * 4));
  detail::append_bytes(out, kTemplateMagic, 4);
  detail::append_u16(out, kStoreVersion);
  detail::append_u32(out, static_cast<std::uint32_t>(dim));
  detail::append_u64(out, templates.size());
  for (const Template& t : templates) {
    detail::append_u32(out, static_cast<std::uint32_t>(t.id.size()));
    detail::append_bytes(out, t.id.data(), t.id.size());
  }
  for (const Template& t : templates) {
    for (float v : t.features) detail::append_f32(out, v);
  }
  return detail::store_file(path, out);
}

inline std::vector<Template> read_templates(const std::filesystem::path& path) {
  std::string data = detail::load_file(path);
  detail::Cursor cur(data, "template file '" + path.string() + "'");

  char magic[4];
  cur.read_raw(magic, 4, "header");
  if (std::memcmp(magic, kTemplateMagic, 4) != 0) {
    raise(ErrorKind::format, cur.label() + ": bad magic");
  }
  std::uint16_t version = cur.read_u16("header");
  if (version != kStoreVersion) {
    raise(ErrorKind::format, cur.label() + ": unsupported version " +
                                 std::to_string(version));
  }
  std::uint32_t dim = cur.read_u32("header");
  std::uint64_t count = cur.read_u64("header");
  if (count > 0 && dim == 0) {
    raise(ErrorKind::format, cur.label() + ": zero dimension with nonzero count");
  }
  if (count > (1ull << 32) || dim > (1u << 20)) {
    raise(ErrorKind::format, cur.label() + ": implausible header sizes");
  }

  std::vector<Template> templates(static_cast<std::size_t>(count));
  for (auto& t : templates) {
    std::uint32_t len = cur.read_u32("id table");
    if (len > (1u << 20)) {
      raise(ErrorKind::format, cur.label() + ": implausible id length");
    }
    t.id = cur.read_string(len, "id table");
  }
  std::uint64_t payload = count * static_cast<std::uint64_t>(dim) * 4;
  if (cur.remaining() < payload) {
    raise(ErrorKind::format, cur.label() + ": truncated payload (" +
                                 std::to_string(cur.remaining()) + " of " +
                                 std::to_string(payload) + " bytes)");
  }
  for (std::size_t r = 0; r < templates.size(); ++r) {
    auto& t = templates[r];
    t.features.resize(dim);
    for (std::uint32_t i = 0; i < dim; ++i) {
      t.features[i] = cur.read_f32("payload");
    }
    if (!is_unit_norm(std::span<const float>(t.features),
                      kStoredNormTolerance)) {
      raise(ErrorKind::format, cur.label() + ": norm violation in row " +
                                   std::to_string(r) + " (id '" + t.id + "')");
    }
  }
  cur.expect_end();
  return templates;
}

// ---------------------------------------------------------------------------
// Dataset files ("CDST"): same layout as template files with a label table
// and a little-endian f64 payload.

inline std::uint64_t write_dataset(const std::filesystem::path& path,
                                   const LabeledDataset& data) {
  validate_dataset(data);
  std::string out;
  out.reserve(18 + data.labels.size() * 16 + data.features.size() * 8);
  detail::append_bytes(out, kDatasetMagic, 4);
  detail::append_u16(out, kStoreVersion);
  detail::append_u32(out, static_cast<std::uint32_t>(data.dim_raw));
  detail::append_u64(out, data.labels.size());
  for (const std::string& label : data.labels) {
    detail::append_u32(out, static_cast<std::uint32_t>(label.size()));
    detail::append_bytes(out, label.data(), label.size());
  }
  for (double v : data.features) detail::append_f64(out, v);
  return detail::store_file(path, out);
}

inline LabeledDataset read_dataset(const std::filesystem::path& path) {
  std::string raw = detail::load_file(path);
  detail::Cursor cur(raw, "dataset file '" + path.string() + "'");

  char magic[4];
  cur.read_raw(magic, 4, "header");
  if (std::memcmp(magic, kDatasetMagic, 4) != 0) {
    raise(ErrorKind::format, cur.label() + ": bad magic");
  }
  std::uint16_t version = cur.read_u16("header");
  if (version != kStoreVersion) {
    raise(ErrorKind::format, cur.label() + ": unsupported version " +
                                 std::to_string(version));
  }
  std::uint32_t dim = cur.read_u32("header");
  std::uint64_t count = cur.read_u64("header");
  if (dim == 0 || count == 0) {
    raise(ErrorKind::format, cur.label() + ": empty dataset");
  }
  if (count > (1ull << 32) || dim > (1u << 20)) {
    raise(ErrorKind::format, cur.label() + ": implausible header sizes");
  }

  LabeledDataset data;
  data.dim_raw = dim;
  data.labels.resize(static_cast<std::size_t>(count));
  for (auto& label : data.labels) {
    std::uint32_t len = cur.read_u32("label table");
    if (len == 0 || len > (1u << 20)) {
      raise(ErrorKind::format, cur.label() + ": implausible label length");
    }
    label = cur.read_string(len, "label table");
  }
  std::uint64_t values = count * static_cast<std::uint64_t>(dim);
  if (cur.remaining() < values * 8) {
    raise(ErrorKind::format, cur.label() + ": truncated payload (" +
                                 std::to_string(cur.remaining()) + " of " +
                                 std::to_string(values * 8) + " bytes)");
  }
  data.features.resize(static_cast<std::size_t>(values));
  for (auto& v : data.features) v = cur.read_f64("payload");
  cur.expect_end();
  return data;
}

// ---------------------------------------------------------------------------
// Model files: structured text. Doubles use shortest round-trip formatting,
// so a read-back model is bit-equal to the written one. '#' lines after the
// header are free-form comments (provenance).

inline std::uint64_t write_model(const std::filesystem::path& path,
                                 const CascadeModel& model,
                                 std::span<const std::string> comments = {}) {
  validate_model(model);
  std::string out;
  out += kModelHeader;
  out += '\n';
  detail::append_comment_lines(out, comments);
  out += "dim " + std::to_string(model.plan.dim()) + "\n";
  out += "stages " + std::to_string(model.plan.stage_count()) + "\n";
  out += "boundaries";
  for (std::size_t b : model.plan.boundaries) out += " " + std::to_string(b);
  out += "\nthresholds";
  for (double t : model.thresholds) out += " " + detail::format_double(t);
  out += "\ntargets";
  for (double v : model.target_vrs) out += " " + detail::format_double(v);
  out += "\ntrain_count " + std::to_string(model.train_count) + "\n";
  return detail::store_file(path, out);
}

inline CascadeModel read_model(const std::filesystem::path& path) {
  std::string text = detail::load_file(path);
  std::string where = "model file '" + path.string() + "'";
  auto lines = detail::split_lines(text);
  if (lines.empty() || lines[0] != kModelHeader) {
    raise(ErrorKind::format, where + ": missing or wrong header line");
  }

  CascadeModel model;
  bool saw_dim = false, saw_stages = false, saw_bounds = false;
  bool saw_thresholds = false, saw_targets = false, saw_count = false;
  std::uint64_t dim = 0, stages = 0;

  for (std::size_t li = 1; li < lines.size(); ++li) {
    auto line = lines[li];
    if (line.empty() || line[0] == '#') continue;
    auto tokens = detail::split_tokens(line);
    if (tokens.empty()) continue;
    std::string_view key = tokens[0];
    auto values = std::span(tokens).subspan(1);

    auto mark_once = [&](bool& flag) {
      if (flag) {
        raise(ErrorKind::format,
              where + ": duplicate key '" + std::string(key) + "'");
      }
      flag = true;
    };
    auto single = [&]() -> std::string_view {
      if (values.size() != 1) {
        raise(ErrorKind::format,
              where + ": key '" + std::string(key) + "' needs one value");
      }
      return values[0];
    };

    if (key == "dim") {
      mark_once(saw_dim);
      dim = detail::parse_u64(single(), where);
    } else if (key == "stages") {
      mark_once(saw_stages);
      stages = detail::parse_u64(single(), where);
    } else if (key == "boundaries") {
      mark_once(saw_bounds);
      for (auto v : values) {
        model.plan.boundaries.push_back(
            static_cast<std::size_t>(detail::parse_u64(v, where)));
      }
    } else if (key == "thresholds") {
      mark_once(saw_thresholds);
      for (auto v : values) {
        model.thresholds.push_back(detail::parse_double(v, where));
      }
    } else if (key == "targets") {
      mark_once(saw_targets);
      for (auto v : values) {
        model.target_vrs.push_back(detail::parse_double(v, where));
      }
    } else if (key == "train_count") {
      mark_once(saw_count);
      model.train_count = detail::parse_u64(single(), where);
    } else {
      raise(ErrorKind::format,
            where + ": unknown key '" + std::string(key) + "'");
    }
  }

  if (!(saw_dim && saw_stages && saw_bounds && saw_thresholds && saw_targets &&
        saw_count)) {
    raise(ErrorKind::format, where + ": missing required keys");
  }
  if (model.plan.boundaries.size() != stages) {
    raise(ErrorKind::format,
          where + ": stages " + std::to_string(stages) + " does not match " +
              std::to_string(model.plan.boundaries.size()) + " boundaries");
  }
  if (model.plan.dim() != dim) {
    raise(ErrorKind::format,
          where + ": dim " + std::to_string(dim) +
              " does not match last boundary " +
              std::to_string(model.plan.dim()));
  }
  try {
    validate_model(model);
  } catch (const Error& e) {
    raise(ErrorKind::format, where + ": invalid model: " + e.what());
  }
  return model;
}

// ---------------------------------------------------------------------------
// Projection files: text header followed by a raw little-endian f64 payload
// holding mean, row-major basis, then eigenvalues (eigenvalues are part of
// the projection object, so round-trips reproduce it exactly).

inline std::uint64_t write_projection(const std::filesystem::path& path,
                                      const LdaProjection& p,
                                      std::span<const std::string> comments = {}) {
  validate_projection(p);
  std::string out;
  out += kProjectionHeader;
  out += '\n';
  detail::append_comment_lines(out, comments);
  std::size_t doubles = p.mean.size() + p.basis.size() + p.eigenvalues.size();
  out += "dim_raw " + std::to_string(p.dim_raw) + "\n";
  out += "dim_out " + std::to_string(p.dim_out) + "\n";
  out += "payload f64le " + std::to_string(doubles) + "\n";
  out.reserve(out.size() + doubles * 8);
  for (double v : p.mean) detail::append_f64(out, v);
  for (double v : p.basis) detail::append_f64(out, v);
  for (double v : p.eigenvalues) detail::append_f64(out, v);
  return detail::store_file(path, out);
}

inline LdaProjection read_projection(const std::filesystem::path& path) {
  std::string data = detail::load_file(path);
  std::string where = "projection file '" + path.string() + "'";

  // Text header: consume full lines until the payload marker.
  std::size_t offset = 0;
  bool saw_header = false, saw_raw = false, saw_out = false;
  std::uint64_t dim_raw = 0, dim_out = 0, doubles = 0;
  bool payload_marker = false;
  while (offset < data.size()) {
    std::size_t end = data.find('\n', offset);
    if (end == std::string::npos) {
      raise(ErrorKind::format, where + ": truncated header");
    }
    std::string_view line(data.data() + offset, end - offset);
    offset = end + 1;
    if (!saw_header) {
      if (line != kProjectionHeader) {
        raise(ErrorKind::format, where + ": missing or wrong header line");
      }
      saw_header = true;
      continue;
    }
    if (line.empty() || line[0] == '#') continue;
    auto tokens = detail::split_tokens(line);
    if (tokens.empty()) continue;
    if (tokens[0] == "dim_raw" && tokens.size() == 2) {
      if (saw_raw) raise(ErrorKind::format, where + ": duplicate dim_raw");
      saw_raw = true;
      dim_raw = detail::parse_u64(tokens[1], where);
    } else if (tokens[0] == "dim_out" && tokens.size() == 2) {
      if (saw_out) raise(ErrorKind::format, where + ": duplicate dim_out");
      saw_out = true;
      dim_out = detail::parse_u64(tokens[1], where);
    } else if (tokens[0] == "payload") {
      if (tokens.size() != 3 || tokens[1] != "f64le") {
        raise(ErrorKind::format, where + ": unsupported payload layout");
      }
      doubles = detail::parse_u64(tokens[2], where);
      payload_marker = true;
      break;
    } else {
      raise(ErrorKind::format,
            where + ": unknown key '" + std::string(tokens[0]) + "'");
    }
  }
  if (!saw_header || !payload_marker || !saw_raw || !saw_out) {
    raise(ErrorKind::format, where + ": incomplete header");
  }
  if (dim_raw == 0 || dim_out == 0 || dim_out > dim_raw) {
    raise(ErrorKind::format, where + ": invalid dimensions");
  }
  std::uint64_t expected = dim_raw + dim_raw * dim_out + dim_out;
  if (doubles != expected) {
    raise(ErrorKind::format,
          where + ": payload count " + std::to_string(doubles) +
              " does not match dimensions (expected " +
              std::to_string(expected) + ")");
  }

  detail::Cursor cur(std::string_view(data).substr(offset), where);
  LdaProjection p;
  p.dim_raw = static_cast<std::size_t>(dim_raw);
  p.dim_out = static_cast<std::size_t>(dim_out);
  p.mean.resize(p.dim_raw);
  p.basis.resize(p.dim_raw * p.dim_out);
  p.eigenvalues.resize(p.dim_out);
  cur.need(static_cast<std::size_t>(doubles) * 8, "payload");
  for (auto& v : p.mean) v = cur.read_f64("payload");
  for (auto& v : p.basis) v = cur.read_f64("payload");
  for (auto& v : p.eigenvalues) v = cur.read_f64("payload");
  cur.expect_end();
  try {
    validate_projection(p);
  } catch (const Error& e) {
    raise(ErrorKind::format, where + ": invalid projection: " + e.what());
  }
  return p;
}

}  // namespace stagematch
