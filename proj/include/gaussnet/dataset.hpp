#pragma once

// Dataset ingestion and synthesis: the CIFAR-10 binary format, the
// down-sample-and-zero-pad derivation, a synthetic shapes set for
// desk-scale training, and a cached on-disk form using the container
// format. Pixels live in [0,1]; no mean subtraction, so sup norms in
// certificates stay interpretable.

#include <cmath>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "gaussnet/serialize.hpp"
#include "gaussnet/tensor.hpp"

namespace gaussnet {

struct LabeledDataset {
  FeatureMap<float> images;  // batch = dataset size
  std::vector<int> labels;
  int class_count = 0;
  std::string name;

  int size() const { return images.batch(); }

  void validate() const {
    if (images.batch() != int(labels.size()))
      throw std::invalid_argument("LabeledDataset: image/label count mismatch");
    if (class_count < 1) throw std::invalid_argument("LabeledDataset: class_count < 1");
    for (int l : labels)
      if (l < 0 || l >= class_count)
        throw std::invalid_argument("LabeledDataset: label out of range");
    if (!images.all_finite())
      throw std::invalid_argument("LabeledDataset: non-finite pixel");
  }
};

/// One example as a batch-1 map.
inline FeatureMap<float> get_example(const LabeledDataset& ds, int i) {
  if (i < 0 || i >= ds.size()) throw std::invalid_argument("get_example: index out of range");
  FeatureMap<float> out(1, ds.images.channels(), ds.images.height(), ds.images.width());
  const std::size_t n = out.size();
  std::copy(ds.images.data() + std::size_t(i) * n, ds.images.data() + std::size_t(i + 1) * n,
            out.data());
  return out;
}

/// Examples at the given indices, stacked into one batch.
inline FeatureMap<float> gather_batch(const LabeledDataset& ds, const std::vector<int>& idx) {
  FeatureMap<float> out(int(idx.size()), ds.images.channels(), ds.images.height(),
                        ds.images.width());
  const std::size_t n = std::size_t(ds.images.channels()) * ds.images.height() *
                        ds.images.width();
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] < 0 || idx[k] >= ds.size())
      throw std::invalid_argument("gather_batch: index out of range");
    std::copy(ds.images.data() + std::size_t(idx[k]) * n,
              ds.images.data() + std::size_t(idx[k] + 1) * n, out.data() + k * n);
  }
  return out;
}

/// Two datasets of matching geometry stacked back to back (a first).
inline LabeledDataset concat_datasets(const LabeledDataset& a, const LabeledDataset& b) {
  if (a.images.channels() != b.images.channels() ||
      a.images.height() != b.images.height() || a.images.width() != b.images.width())
    throw std::invalid_argument("concat_datasets: image geometry mismatch");
  if (a.class_count != b.class_count)
    throw std::invalid_argument("concat_datasets: class_count mismatch");
  LabeledDataset out;
  out.name = a.name;
  out.class_count = a.class_count;
  out.images = FeatureMap<float>(a.size() + b.size(), a.images.channels(),
                                 a.images.height(), a.images.width());
  std::copy(a.images.data(), a.images.data() + a.images.size(), out.images.data());
  std::copy(b.images.data(), b.images.data() + b.images.size(),
            out.images.data() + a.images.size());
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  return out;
}

// ---------------------------------------------------------------------------
// CIFAR-10 binary batches: 3073-byte records, 1 label byte then 3072
// channel-planar pixel bytes (1024 R, 1024 G, 1024 B), 32x32 row-major.

inline constexpr int kCifarSide = 32;
inline constexpr std::size_t kCifarRecord = 1 + 3 * 1024;

inline LabeledDataset load_cifar10(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.empty() || buf.size() % kCifarRecord != 0)
    throw std::runtime_error(path + ": size is not a multiple of 3073 bytes");

  const int n = int(buf.size() / kCifarRecord);
  LabeledDataset ds;
  ds.name = "cifar10";
  ds.class_count = 10;
  ds.images = FeatureMap<float>(n, 3, kCifarSide, kCifarSide);
  ds.labels.resize(n);
  for (int i = 0; i < n; ++i) {
    const std::uint8_t* rec =
        reinterpret_cast<const std::uint8_t*>(buf.data()) + std::size_t(i) * kCifarRecord;
    if (rec[0] > 9)
      throw std::runtime_error(path + ": label byte > 9 in record " + std::to_string(i));
    ds.labels[i] = rec[0];
    float* dst = ds.images.plane(i, 0);
    for (std::size_t p = 0; p < 3 * 1024; ++p) dst[p] = float(rec[1 + p]) / 255.f;
  }
  return ds;
}

/// Inverse of load_cifar10; loading then saving reproduces input bytes.
inline void save_cifar10(const LabeledDataset& ds, const std::string& path) {
  if (ds.images.channels() != 3 || ds.images.height() != kCifarSide ||
      ds.images.width() != kCifarSide)
    throw std::invalid_argument("save_cifar10: needs 3x32x32 images");
  std::string out;
  out.reserve(std::size_t(ds.size()) * kCifarRecord);
  for (int i = 0; i < ds.size(); ++i) {
    out.push_back(char(ds.labels[i]));
    const float* src = ds.images.plane(i, 0);
    for (std::size_t p = 0; p < 3 * 1024; ++p)
      out.push_back(char(std::uint8_t(std::lround(src[p] * 255.f))));
  }
  io::atomic_write_bytes(path, out);
}

// ---------------------------------------------------------------------------
// CIFAR-10-ZP: bilinear down-sample 32 -> 30, zero-pad one pixel per side
// back to 32, so one-pixel shifts never push content off the image.

namespace detail {

inline float bilinear_at(const float* plane, int side, double y, double x) {
  const int y0 = std::clamp(int(std::floor(y)), 0, side - 1);
  const int x0 = std::clamp(int(std::floor(x)), 0, side - 1);
  const int y1 = std::min(y0 + 1, side - 1);
  const int x1 = std::min(x0 + 1, side - 1);
  const double fy = std::clamp(y - y0, 0.0, 1.0);
  const double fx = std::clamp(x - x0, 0.0, 1.0);
  const double top = double(plane[y0 * side + x0]) * (1 - fx) +
                     double(plane[y0 * side + x1]) * fx;
  const double bot = double(plane[y1 * side + x0]) * (1 - fx) +
                     double(plane[y1 * side + x1]) * fx;
  return float(top * (1 - fy) + bot * fy);
}

}  // namespace detail

inline LabeledDataset derive_zp(const LabeledDataset& ds) {
  if (ds.images.height() != kCifarSide || ds.images.width() != kCifarSide)
    throw std::invalid_argument("derive_zp: expects 32x32 images");
  const int inner = kCifarSide - 2;  // 30
  const double scale = double(kCifarSide) / inner;

  LabeledDataset out;
  out.name = ds.name + "-zp";
  out.class_count = ds.class_count;
  out.labels = ds.labels;
  out.images = FeatureMap<float>(ds.size(), ds.images.channels(), kCifarSide, kCifarSide);
  for (int i = 0; i < ds.size(); ++i)
    for (int c = 0; c < ds.images.channels(); ++c) {
      const float* src = ds.images.plane(i, c);
      float* dst = out.images.plane(i, c);
      for (int y = 0; y < inner; ++y)
        for (int x = 0; x < inner; ++x) {
          const double sy = (y + 0.5) * scale - 0.5;
          const double sx = (x + 0.5) * scale - 0.5;
          dst[std::size_t(y + 1) * kCifarSide + (x + 1)] =
              detail::bilinear_at(src, kCifarSide, sy, sx);
        }
    }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic shapes: one class per shape, placed uniformly with the whole
// shape at least 2 pixels inside the border so unit shifts lose nothing.
// Sub-pixel centers and a little pixel noise keep the task honest.

inline LabeledDataset synth_shapes(int n, int size, int classes, unsigned seed,
                                   float noise = 0.05f) {
  if (size < 12) throw std::invalid_argument("synth_shapes: size must be >= 12");
  if (classes < 2 || classes > 4)
    throw std::invalid_argument("synth_shapes: classes must be in [2, 4]");

  LabeledDataset ds;
  ds.name = "shapes";
  ds.class_count = classes;
  ds.images = FeatureMap<float>(n, 1, size, size);
  ds.labels.resize(n);

  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    const int label = i % classes;
    ds.labels[i] = label;
    float* img = ds.images.plane(i, 0);

    const double rmax = std::min(5.0, size / 2.0 - 3.0);
    const double radius = 2.5 + (rmax - 2.5) * unit(rng);  // shape extent
    const double margin = radius + 2.0 + 1.0;              // keep 2px interior
    const double cy = margin + (size - 2 * margin) * unit(rng);
    const double cx = margin + (size - 2 * margin) * unit(rng);
    const float fg = float(0.55 + 0.45 * unit(rng));  // foreground intensity

    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double dy = y - cy, dx = x - cx;
        bool inside = false;
        switch (label) {
          case 0:  // disk
            inside = dy * dy + dx * dx <= radius * radius;
            break;
          case 1:  // square
            inside = std::abs(dy) <= radius * 0.9 && std::abs(dx) <= radius * 0.9;
            break;
          case 2:  // cross
            inside = (std::abs(dx) <= radius * 0.35 && std::abs(dy) <= radius) ||
                     (std::abs(dy) <= radius * 0.35 && std::abs(dx) <= radius);
            break;
          case 3:  // upward triangle
            inside = dy >= -radius && dy <= radius &&
                     std::abs(dx) <= (dy + radius) * 0.55;
            break;
        }
        float v = inside ? fg : 0.f;
        if (noise > 0.f) v += noise * float(unit(rng));
        img[std::size_t(y) * size + x] = std::min(v, 1.f);
      }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Dataset cache in the container format: labels and geometry in the JSON
// header, pixels as one float block.

inline void save_dataset(const std::string& path, const LabeledDataset& ds) {
  ds.validate();
  io::json header{{"kind", "dataset"},
                  {"name", ds.name},
                  {"class_count", ds.class_count},
                  {"labels", ds.labels},
                  {"batch", ds.images.batch()},
                  {"channels", ds.images.channels()},
                  {"height", ds.images.height()},
                  {"width", ds.images.width()}};
  io::Block images{"images", ds.images.values()};
  io::write_container(path, std::move(header), {std::move(images)});
}

inline LabeledDataset load_dataset(const std::string& path) {
  auto [header, blocks] = io::read_container(path);
  if (header.at("kind").get<std::string>() != "dataset")
    throw std::runtime_error(path + ": container does not hold a dataset");
  LabeledDataset ds;
  ds.name = header.at("name").get<std::string>();
  ds.class_count = header.at("class_count").get<int>();
  ds.labels = header.at("labels").get<std::vector<int>>();
  Shape s{header.at("batch").get<int>(), header.at("channels").get<int>(),
          header.at("height").get<int>(), header.at("width").get<int>()};
  if (blocks.size() != 1 || blocks[0].name != "images")
    throw std::runtime_error(path + ": expected a single images block");
  ds.images = FeatureMap<float>(s, std::move(blocks[0].data));
  ds.validate();
  return ds;
}

}  // namespace gaussnet
