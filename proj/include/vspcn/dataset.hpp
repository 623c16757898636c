#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "vspcn/attributes.hpp"
#include "vspcn/binary_io.hpp"
#include "vspcn/config.hpp"
#include "vspcn/errors.hpp"
#include "vspcn/tensor.hpp"

namespace vspcn {

/// Images stored as [count, patches, patch_dim] with one label each.
struct Split {
  Tensor<double> images;
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }

  // Patch grid of sample i as a (patches x patch_dim) matrix.
  Tensor<double> image(std::size_t i) const {
    const std::size_t np = images.shape()[1];
    const std::size_t pd = images.shape()[2];
    const double* src = images.data() + i * np * pd;
    return Tensor<double>({np, pd}, std::vector<double>(src, src + np * pd));
  }
};

/// Seen classes carry labels [0, n_seen), unseen classes [n_seen, n_classes).
/// Only `train` is ever used for optimisation and holds seen classes only.
struct GzslDataset {
  std::size_t n_seen = 0;
  std::size_t n_unseen = 0;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::size_t patch_dim = 0;
  Tensor<double> attributes;        // S, N_a x D
  Tensor<double> class_attributes;  // A, N_c x N_a
  Split train;
  Split test_seen;
  Split test_unseen;

  std::size_t n_classes() const { return n_seen + n_unseen; }
  std::size_t n_attr() const { return attributes.rows(); }
  std::size_t num_patches() const { return grid_h * grid_w; }
  bool is_unseen(std::size_t label) const { return label >= n_seen; }

  Tensor<double> seen_class_attributes() const {
    const std::size_t na = class_attributes.cols();
    const double* src = class_attributes.data();
    return Tensor<double>({n_seen, na}, std::vector<double>(src, src + n_seen * na));
  }
};

namespace detail {

inline void normalize_rows_l2(Tensor<double>& t) {
  for (std::size_t r = 0; r < t.rows(); ++r) {
    auto row = t.row_span(r);
    double n = 0;
    for (double v : row) n += v * v;
    n = std::sqrt(n);
    if (n > 0) {
      for (double& v : row) v /= n;
    }
  }
}

// Active attribute sets, distinct across all classes whenever enough
// subsets exist. Seen classes first walk a shuffled attribute order so every
// attribute is used by some seen class when n_seen * k >= N_a; a walk step
// that repeats an earlier set falls back to a fresh random subset, as do
// all unseen classes.
inline std::vector<std::vector<std::size_t>> class_supports(const DataConfig& cfg, std::mt19937_64& rng) {
  const std::size_t na = cfg.n_attr;
  const std::size_t k = cfg.active();
  std::vector<std::size_t> order(na);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  std::set<std::vector<std::size_t>> taken;
  auto random_subset = [&] {
    std::vector<std::size_t> s;
    for (int attempt = 0; attempt < 200; ++attempt) {
      std::vector<std::size_t> pool(na);
      std::iota(pool.begin(), pool.end(), 0);
      std::shuffle(pool.begin(), pool.end(), rng);
      s.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
      std::sort(s.begin(), s.end());
      if (!taken.contains(s)) break;
    }
    return s;
  };

  std::vector<std::vector<std::size_t>> supports;
  std::size_t cursor = 0;
  for (std::size_t c = 0; c < cfg.n_seen; ++c) {
    std::vector<std::size_t> s;
    for (std::size_t j = 0; j < k; ++j) s.push_back(order[(cursor + j) % na]);
    cursor += k;
    std::sort(s.begin(), s.end());
    if (taken.contains(s)) s = random_subset();
    taken.insert(s);
    supports.push_back(std::move(s));
  }
  for (std::size_t c = 0; c < cfg.n_unseen; ++c) {
    auto s = random_subset();
    taken.insert(s);
    supports.push_back(std::move(s));
  }
  return supports;
}

}  // namespace detail

/// Synthetic GZSL benchmark. Each class is a sparse non-negative attribute
/// vector (unit L2 norm); each patch position p owns a fixed rendering
/// matrix R_p (patch_dim x N_a), and an image of class y has patches
/// R_p a_y + noise. Attribute-to-pixel structure is therefore linear and
/// shared across classes, which is what lets unseen classes be recognised
/// from their attributes alone.
inline GzslDataset synth_gzsl_dataset(const RunConfig& cfg, std::uint64_t seed) {
  const auto& dc = cfg.data;
  const auto& mc = cfg.model;
  if (dc.n_seen == 0 || dc.n_unseen == 0) throw ConfigError("dataset needs at least one seen and one unseen class");
  if (dc.train_per_class == 0 || dc.test_per_class == 0) throw ConfigError("dataset needs at least one image per class");
  if (dc.n_attr == 0 || dc.active() > dc.n_attr) throw ConfigError("invalid attribute count");
  if (mc.num_patches() == 0 || mc.patch_dim == 0) throw ConfigError("invalid patch grid");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> weight(0.5, 1.5);

  GzslDataset ds;
  ds.n_seen = dc.n_seen;
  ds.n_unseen = dc.n_unseen;
  ds.grid_h = mc.grid_h;
  ds.grid_w = mc.grid_w;
  ds.patch_dim = mc.patch_dim;

  ds.attributes = Tensor<double>({dc.n_attr, mc.d_model});
  for (auto& v : ds.attributes.values()) v = normal(rng);
  detail::normalize_rows_l2(ds.attributes);
  if (!dc.attr_file.empty()) {
    ds.attributes = load_attribute_vectors(dc.attr_file, dc.n_attr, mc.d_model).vectors;
    detail::normalize_rows_l2(ds.attributes);
  }

  const auto supports = detail::class_supports(dc, rng);
  ds.class_attributes = Tensor<double>({dc.n_classes(), dc.n_attr});
  for (std::size_t c = 0; c < supports.size(); ++c) {
    for (std::size_t a : supports[c]) ds.class_attributes(c, a) = weight(rng);
  }
  detail::normalize_rows_l2(ds.class_attributes);

  const std::size_t np = mc.num_patches();
  const std::size_t pd = mc.patch_dim;
  std::vector<Tensor<double>> render;
  for (std::size_t p = 0; p < np; ++p) {
    Tensor<double> r({pd, dc.n_attr});
    for (auto& v : r.values()) v = normal(rng);
    render.push_back(std::move(r));
  }

  auto make_split = [&](std::size_t first_class, std::size_t n_classes, std::size_t per_class) {
    Split s;
    const std::size_t n = n_classes * per_class;
    s.images = Tensor<double>({n, np, pd});
    s.labels.reserve(n);
    std::size_t i = 0;
    for (std::size_t c = first_class; c < first_class + n_classes; ++c) {
      auto a = ds.class_attributes.row_span(c);
      for (std::size_t k = 0; k < per_class; ++k, ++i) {
        double* img = s.images.data() + i * np * pd;
        for (std::size_t p = 0; p < np; ++p) {
          for (std::size_t d = 0; d < pd; ++d) {
            double v = 0;
            for (std::size_t j = 0; j < dc.n_attr; ++j) v += render[p](d, j) * a[j];
            img[p * pd + d] = v + dc.noise * normal(rng);
          }
        }
        s.labels.push_back(c);
      }
    }
    return s;
  };

  ds.train = make_split(0, dc.n_seen, dc.train_per_class);
  ds.test_seen = make_split(0, dc.n_seen, dc.test_per_class);
  ds.test_unseen = make_split(dc.n_seen, dc.n_unseen, dc.test_per_class);
  return ds;
}

inline constexpr std::string_view kDatasetMagic = "VSPD";
inline constexpr std::uint16_t kDatasetVersion = 1;

namespace detail {

inline void write_split(io::ByteWriter& w, const Split& s) {
  w.tensor(s.images);
  Tensor<double> labels({s.labels.size()});
  for (std::size_t i = 0; i < s.labels.size(); ++i) labels[i] = static_cast<double>(s.labels[i]);
  w.tensor(labels);
}

inline Split read_split(io::ByteReader& r, const std::string& name, const GzslDataset& ds, std::size_t lo,
                        std::size_t hi) {
  Split s;
  s.images = r.tensor(name + ".images");
  const Tensor<double> labels = r.tensor(name + ".labels");
  if (s.images.rank() != 3 || s.images.shape()[1] != ds.num_patches() || s.images.shape()[2] != ds.patch_dim) {
    throw ShapeMismatchError("dataset: '" + name + ".images' has shape " + shape_string(s.images.shape()));
  }
  if (labels.rank() != 1 || labels.size() != s.images.shape()[0]) {
    throw ShapeMismatchError("dataset: '" + name + ".labels' does not match its image count");
  }
  for (double v : labels.values()) {
    if (v != std::floor(v) || v < double(lo) || v >= double(hi)) {
      throw FormatError("dataset: '" + name + ".labels' holds an out-of-range label");
    }
    s.labels.push_back(static_cast<std::size_t>(v));
  }
  return s;
}

}  // namespace detail

/// Layout after the container header (all little-endian):
///   u32 n_seen, n_unseen, grid_h, grid_w, patch_dim
///   tensor S [N_a, D], tensor A [N_c, N_a]
///   per split (train, test_seen, test_unseen): images [N, patches, patch_dim], labels [N]
inline std::vector<std::uint8_t> serialize_dataset(const GzslDataset& ds) {
  io::ByteWriter w;
  for (std::size_t v : {ds.n_seen, ds.n_unseen, ds.grid_h, ds.grid_w, ds.patch_dim}) {
    w.u32(static_cast<std::uint32_t>(v));
  }
  w.tensor(ds.attributes);
  w.tensor(ds.class_attributes);
  detail::write_split(w, ds.train);
  detail::write_split(w, ds.test_seen);
  detail::write_split(w, ds.test_unseen);
  return io::seal_container(kDatasetMagic, kDatasetVersion, w.bytes());
}

inline GzslDataset deserialize_dataset(std::span<const std::uint8_t> bytes) {
  auto r = io::open_container(bytes, kDatasetMagic, kDatasetVersion, "dataset");
  GzslDataset ds;
  ds.n_seen = r.u32();
  ds.n_unseen = r.u32();
  ds.grid_h = r.u32();
  ds.grid_w = r.u32();
  ds.patch_dim = r.u32();
  if (ds.n_seen == 0 || ds.n_unseen == 0 || ds.num_patches() == 0 || ds.patch_dim == 0) {
    throw FormatError("dataset: header has zero extents");
  }
  ds.attributes = r.tensor("attributes");
  ds.class_attributes = r.tensor("class_attributes");
  if (ds.attributes.rank() != 2 || ds.class_attributes.rank() != 2 ||
      ds.class_attributes.rows() != ds.n_classes() || ds.class_attributes.cols() != ds.attributes.rows()) {
    throw ShapeMismatchError("dataset: attribute tables disagree with the class counts");
  }
  ds.train = detail::read_split(r, "train", ds, 0, ds.n_seen);
  ds.test_seen = detail::read_split(r, "test_seen", ds, 0, ds.n_seen);
  ds.test_unseen = detail::read_split(r, "test_unseen", ds, ds.n_seen, ds.n_classes());
  if (r.remaining() != 0) throw FormatError("dataset: unexpected bytes after the last split");
  return ds;
}

inline void save_dataset(const GzslDataset& ds, const std::string& path) {
  io::write_file(path, serialize_dataset(ds));
}

inline GzslDataset load_dataset(const std::string& path) { return deserialize_dataset(io::read_file(path)); }

/// Checks that a dataset fits the model dimensions of a config.
inline void check_dataset_fits(const GzslDataset& ds, const RunConfig& cfg) {
  const auto& m = cfg.model;
  auto fail = [](const std::string& what) { throw ConfigError("dataset does not fit config: " + what); };
  if (ds.grid_h != m.grid_h || ds.grid_w != m.grid_w) fail("patch grid");
  if (ds.patch_dim != m.patch_dim) fail("patch_dim");
  if (ds.attributes.cols() != m.d_model) fail("attribute vector width vs d_model");
  if (ds.n_attr() != cfg.data.n_attr) fail("n_attr");
  if (ds.n_seen != cfg.data.n_seen || ds.n_unseen != cfg.data.n_unseen) fail("class counts");
}

}  // namespace vspcn
