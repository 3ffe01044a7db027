#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dsnet/cube.hpp"
#include "dsnet/rng.hpp"
#include "dsnet/scene.hpp"
#include "dsnet/tensor.hpp"

namespace dsnet {

/// One labeled training sample: an H x H spectral window around a pixel.
template <typename S>
struct Patch {
  std::vector<S> values;  // [L][H][H]
  std::int64_t center_row = 0, center_col = 0;
  int label = 0;
};

/// The full sequence of labeled patches for a scene. Windows are materialized
/// on demand from the cube with mirror (reflect-101) border handling, in
/// row-major center order.
template <typename S>
class PatchSet {
 public:
  PatchSet(const SpectralCube<S>& cube, const LabelRaster& labels,
           std::int64_t patch_size)
      : cube_(&cube), patch_(patch_size) {
    if (patch_size % 2 == 0 || patch_size < 1) {
      throw DataError("patch size must be odd and positive, got " +
                      std::to_string(patch_size));
    }
    if (patch_size > std::min(cube.rows, cube.cols)) {
      throw DataError("patch size " + std::to_string(patch_size) +
                      " exceeds scene extent " + std::to_string(cube.rows) +
                      "x" + std::to_string(cube.cols));
    }
    if (labels.rows != cube.rows || labels.cols != cube.cols) {
      throw ShapeError("label raster " + std::to_string(labels.rows) + "x" +
                       std::to_string(labels.cols) +
                       " does not match cube extent " +
                       std::to_string(cube.rows) + "x" +
                       std::to_string(cube.cols));
    }
    for (std::int64_t r = 0; r < labels.rows; ++r) {
      for (std::int64_t c = 0; c < labels.cols; ++c) {
        const int lab = labels.at(r, c);
        if (lab > 0) {
          centers_.emplace_back(r, c);
          labels_.push_back(lab);
        }
      }
    }
  }

  std::size_t size() const { return centers_.size(); }
  std::int64_t patch_size() const { return patch_; }
  std::int64_t bands() const { return cube_->bands; }
  int label(std::size_t i) const { return labels_[i]; }
  std::pair<std::int64_t, std::int64_t> center(std::size_t i) const {
    return centers_[i];
  }
  const std::vector<int>& label_list() const { return labels_; }

  /// Flat row-major pixel index of patch i's center.
  std::int64_t pixel_index(std::size_t i) const {
    return centers_[i].first * cube_->cols + centers_[i].second;
  }

  Patch<S> extract(std::size_t i) const {
    Patch<S> p;
    p.center_row = centers_[i].first;
    p.center_col = centers_[i].second;
    p.label = labels_[i];
    p.values.resize(
        static_cast<std::size_t>(cube_->bands * patch_ * patch_));
    write_window(i, p.values.data());
    return p;
  }

  /// Assembles [B, L, H, H] batch input for the listed patch indices.
  Tensor<S> make_batch(const std::vector<std::size_t>& idx) const {
    const std::int64_t B = static_cast<std::int64_t>(idx.size());
    Tensor<S> t = Tensor<S>::zeros({B, cube_->bands, patch_, patch_});
    for (std::int64_t b = 0; b < B; ++b) {
      write_window(idx[static_cast<std::size_t>(b)],
                   t.data() + b * cube_->bands * patch_ * patch_);
    }
    return t;
  }

  std::vector<int> batch_labels(const std::vector<std::size_t>& idx) const {
    std::vector<int> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(labels_[i]);
    return out;
  }

 private:
  void write_window(std::size_t i, S* dst) const {
    const std::int64_t r0 = centers_[i].first - patch_ / 2;
    const std::int64_t c0 = centers_[i].second - patch_ / 2;
    for (std::int64_t l = 0; l < cube_->bands; ++l) {
      for (std::int64_t dr = 0; dr < patch_; ++dr) {
        const std::int64_t r = detail::reflect_index(r0 + dr, cube_->rows);
        for (std::int64_t dc = 0; dc < patch_; ++dc) {
          const std::int64_t c = detail::reflect_index(c0 + dc, cube_->cols);
          *dst++ = cube_->at(l, r, c);
        }
      }
    }
  }

  const SpectralCube<S>* cube_;
  std::int64_t patch_;
  std::vector<std::pair<std::int64_t, std::int64_t>> centers_;
  std::vector<int> labels_;
};

template <typename S>
PatchSet<S> extract_patches(const SpectralCube<S>& cube,
                            const LabelRaster& labels,
                            std::int64_t patch_size) {
  return PatchSet<S>(cube, labels, patch_size);
}

/// Train/test partition request: either the same training count for every
/// class, explicit per-class counts, or a global training ratio.
struct SplitSpec {
  std::optional<std::int64_t> per_class_count;
  std::vector<std::int64_t> class_counts;  // indexed by class id - 1
  std::optional<double> ratio;
  std::uint64_t seed = 0;
};

struct SplitResult {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Per-class sampling without replacement; train and test together cover
/// every patch exactly once. Identical spec -> identical split.
template <typename S>
SplitResult split(const PatchSet<S>& patches, const SplitSpec& spec) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < patches.size(); ++i) {
    by_class[patches.label(i)].push_back(i);
  }
  if (by_class.empty()) throw DataError("split: no labeled patches");

  Rng rng(mix_seed(spec.seed, 0x59713));
  SplitResult out;
  for (auto& [cls, idx] : by_class) {
    std::int64_t want = 0;
    if (spec.ratio) {
      want = static_cast<std::int64_t>(
          std::llround(*spec.ratio * static_cast<double>(idx.size())));
    } else if (!spec.class_counts.empty()) {
      if (cls - 1 >= static_cast<int>(spec.class_counts.size())) {
        throw DataError("split: no training count given for class " +
                        std::to_string(cls));
      }
      want = spec.class_counts[static_cast<std::size_t>(cls - 1)];
    } else if (spec.per_class_count) {
      want = *spec.per_class_count;
    } else {
      throw DataError("split: spec selects neither counts nor ratio");
    }
    if (want < 0 || want > static_cast<std::int64_t>(idx.size())) {
      throw DataError("split: class " + std::to_string(cls) + " has " +
                      std::to_string(idx.size()) + " labeled pixels, " +
                      std::to_string(want) + " requested for training");
    }
    rng.shuffle(idx);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      (static_cast<std::int64_t>(k) < want ? out.train : out.test)
          .push_back(idx[k]);
    }
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

/// Split manifest: text rows of (class id, flat pixel index) per section.
template <typename S>
void save_split(const std::string& path, const PatchSet<S>& patches,
                const SplitResult& split, std::uint64_t seed) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write split manifest " + path);
  out << "# dsnet split manifest\n";
  out << "seed=" << seed << "\n";
  out << "[train]\n";
  for (auto i : split.train) {
    out << patches.label(i) << "," << patches.pixel_index(i) << "\n";
  }
  out << "[test]\n";
  for (auto i : split.test) {
    out << patches.label(i) << "," << patches.pixel_index(i) << "\n";
  }
}

template <typename S>
SplitResult load_split(const std::string& path, const PatchSet<S>& patches) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open split manifest " + path);
  std::map<std::int64_t, std::size_t> by_pixel;
  for (std::size_t i = 0; i < patches.size(); ++i) {
    by_pixel[patches.pixel_index(i)] = i;
  }
  SplitResult out;
  std::vector<std::size_t>* section = nullptr;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (line == "[train]") { section = &out.train; continue; }
    if (line == "[test]") { section = &out.test; continue; }
    if (line.rfind("seed=", 0) == 0) continue;
    if (!section) {
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": row before any [train]/[test] section");
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": expected 'class,pixel', got '" + line + "'");
    }
    const int cls = std::stoi(line.substr(0, comma));
    const std::int64_t pixel = std::stoll(line.substr(comma + 1));
    const auto it = by_pixel.find(pixel);
    if (it == by_pixel.end()) {
      throw DataError(path + ":" + std::to_string(lineno) + ": pixel " +
                      std::to_string(pixel) +
                      " is not a labeled patch center in this scene");
    }
    if (patches.label(it->second) != cls) {
      throw DataError(path + ":" + std::to_string(lineno) + ": pixel " +
                      std::to_string(pixel) + " has label " +
                      std::to_string(patches.label(it->second)) +
                      ", manifest says " + std::to_string(cls));
    }
    section->push_back(it->second);
  }
  return out;
}

}  // namespace dsnet
