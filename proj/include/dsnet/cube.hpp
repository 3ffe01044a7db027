#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "dsnet/common.hpp"

namespace dsnet {

static_assert(std::endian::native == std::endian::little,
              "raster IO assumes a little-endian host");

/// Hyperspectral reflectance cube, band-sequential [L][rows][cols].
template <typename S>
struct SpectralCube {
  std::int64_t bands = 0, rows = 0, cols = 0;
  std::vector<S> data;

  S at(std::int64_t l, std::int64_t r, std::int64_t c) const {
    return data[static_cast<std::size_t>((l * rows + r) * cols + c)];
  }
  S& at(std::int64_t l, std::int64_t r, std::int64_t c) {
    return data[static_cast<std::size_t>((l * rows + r) * cols + c)];
  }

  template <typename T>
  SpectralCube<T> cast() const {
    SpectralCube<T> out;
    out.bands = bands;
    out.rows = rows;
    out.cols = cols;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i)
      out.data[i] = static_cast<T>(data[i]);
    return out;
  }
};

/// Per-pixel class ids; 0 means unlabeled.
struct LabelRaster {
  std::int64_t rows = 0, cols = 0;
  std::vector<std::uint16_t> labels;

  std::uint16_t at(std::int64_t r, std::int64_t c) const {
    return labels[static_cast<std::size_t>(r * cols + c)];
  }
  std::uint16_t& at(std::int64_t r, std::int64_t c) {
    return labels[static_cast<std::size_t>(r * cols + c)];
  }
  int num_classes() const {
    int p = 0;
    for (auto v : labels) p = std::max(p, static_cast<int>(v));
    return p;
  }
};

namespace detail {

inline std::string strip_raw_suffix(const std::string& path) {
  if (path.size() > 4 && path.substr(path.size() - 4) == ".raw") {
    return path.substr(0, path.size() - 4);
  }
  return path;
}

struct RasterHeader {
  std::int64_t bands = 0, rows = 0, cols = 0;
  std::string dtype, interleave, byteorder;
};

inline RasterHeader read_header(const std::string& hdr_path) {
  std::ifstream in(hdr_path);
  if (!in) throw DataError("cannot open header " + hdr_path);
  RasterHeader h;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw DataError(hdr_path + ":" + std::to_string(lineno) +
                      ": expected key=value, got '" + line + "'");
    }
    const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    try {
      if (key == "bands") h.bands = std::stoll(val);
      else if (key == "rows") h.rows = std::stoll(val);
      else if (key == "cols") h.cols = std::stoll(val);
      else if (key == "dtype") h.dtype = val;
      else if (key == "interleave") h.interleave = val;
      else if (key == "byteorder") h.byteorder = val;
      else throw DataError(hdr_path + ": unknown header key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw DataError(hdr_path + ":" + std::to_string(lineno) +
                      ": bad integer '" + val + "'");
    }
  }
  if (h.bands < 1 || h.rows < 1 || h.cols < 1) {
    throw DataError(hdr_path + ": bands/rows/cols must all be >= 1");
  }
  if (h.interleave != "bsq") {
    throw DataError(hdr_path + ": unsupported interleave '" + h.interleave +
                    "' (only bsq)");
  }
  if (h.byteorder != "little") {
    throw DataError(hdr_path + ": unsupported byteorder '" + h.byteorder +
                    "' (only little)");
  }
  return h;
}

inline void write_header(const std::string& hdr_path, std::int64_t bands,
                         std::int64_t rows, std::int64_t cols,
                         const std::string& dtype) {
  std::ofstream out(hdr_path);
  if (!out) throw DataError("cannot write header " + hdr_path);
  out << "bands=" << bands << "\n"
      << "rows=" << rows << "\n"
      << "cols=" << cols << "\n"
      << "dtype=" << dtype << "\n"
      << "interleave=bsq\n"
      << "byteorder=little\n";
}

inline std::vector<char> read_payload(const std::string& raw_path,
                                      std::uint64_t expected_bytes) {
  std::ifstream in(raw_path, std::ios::binary);
  if (!in) throw DataError("cannot open payload " + raw_path);
  in.seekg(0, std::ios::end);
  const std::uint64_t actual = static_cast<std::uint64_t>(in.tellg());
  if (actual != expected_bytes) {
    throw DataError(raw_path + ": payload holds " + std::to_string(actual) +
                    " bytes but header implies " +
                    std::to_string(expected_bytes));
  }
  in.seekg(0);
  std::vector<char> buf(actual);
  in.read(buf.data(), static_cast<std::streamsize>(actual));
  if (!in) throw DataError(raw_path + ": short read");
  return buf;
}

}  // namespace detail

/// Loads `<name>.raw` + `<name>.hdr` (dtype float32). Values must be finite.
inline SpectralCube<float> load_cube(const std::string& path) {
  const std::string base = detail::strip_raw_suffix(path);
  const auto h = detail::read_header(base + ".hdr");
  if (h.dtype != "float32") {
    throw DataError(base + ".hdr: unknown dtype '" + h.dtype +
                    "' for a cube (expected float32)");
  }
  const std::uint64_t count =
      static_cast<std::uint64_t>(h.bands) * h.rows * h.cols;
  auto buf = detail::read_payload(base + ".raw", count * 4);
  SpectralCube<float> cube;
  cube.bands = h.bands;
  cube.rows = h.rows;
  cube.cols = h.cols;
  cube.data.resize(count);
  std::memcpy(cube.data.data(), buf.data(), buf.size());
  for (std::uint64_t i = 0; i < count; ++i) {
    if (!std::isfinite(cube.data[i])) {
      const std::int64_t l = static_cast<std::int64_t>(i) / (h.rows * h.cols);
      const std::int64_t rc = static_cast<std::int64_t>(i) % (h.rows * h.cols);
      throw DataError(base + ".raw: non-finite value at band " +
                      std::to_string(l) + ", row " +
                      std::to_string(rc / h.cols) + ", col " +
                      std::to_string(rc % h.cols));
    }
  }
  return cube;
}

inline void save_cube(const std::string& path, const SpectralCube<float>& cube) {
  const std::string base = detail::strip_raw_suffix(path);
  detail::write_header(base + ".hdr", cube.bands, cube.rows, cube.cols,
                       "float32");
  std::ofstream out(base + ".raw", std::ios::binary);
  if (!out) throw DataError("cannot write payload " + base + ".raw");
  out.write(reinterpret_cast<const char*>(cube.data.data()),
            static_cast<std::streamsize>(cube.data.size() * 4));
  if (!out) throw DataError("short write to " + base + ".raw");
}

inline LabelRaster load_labels(const std::string& path) {
  const std::string base = detail::strip_raw_suffix(path);
  const auto h = detail::read_header(base + ".hdr");
  if (h.dtype != "uint16") {
    throw DataError(base + ".hdr: unknown dtype '" + h.dtype +
                    "' for labels (expected uint16)");
  }
  if (h.bands != 1) {
    throw DataError(base + ".hdr: label rasters are single-band, got bands=" +
                    std::to_string(h.bands));
  }
  const std::uint64_t count = static_cast<std::uint64_t>(h.rows) * h.cols;
  auto buf = detail::read_payload(base + ".raw", count * 2);
  LabelRaster lr;
  lr.rows = h.rows;
  lr.cols = h.cols;
  lr.labels.resize(count);
  std::memcpy(lr.labels.data(), buf.data(), buf.size());
  return lr;
}

inline void save_labels(const std::string& path, const LabelRaster& lr) {
  const std::string base = detail::strip_raw_suffix(path);
  detail::write_header(base + ".hdr", 1, lr.rows, lr.cols, "uint16");
  std::ofstream out(base + ".raw", std::ios::binary);
  if (!out) throw DataError("cannot write payload " + base + ".raw");
  out.write(reinterpret_cast<const char*>(lr.labels.data()),
            static_cast<std::streamsize>(lr.labels.size() * 2));
  if (!out) throw DataError("short write to " + base + ".raw");
}

}  // namespace dsnet
