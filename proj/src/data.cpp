// SPDX-License-Identifier: Apache-2.0
#include "ciard/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

#include "ciard/errors.hpp"
#include "ciard/rng.hpp"

namespace ciard {

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open '" + path.string() + "'");
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

std::uint32_t read_be32(const std::string& bytes, std::size_t off) {
  if (off + 4 > bytes.size()) throw FormatError("truncated IDX header");
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes[off + i]);
  return v;
}

Dataset shuffled(Dataset ds, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x5eed));
  const auto perm = rng.permutation(ds.size());
  return ds.subset(perm);
}

}  // namespace

Shape Dataset::sample_shape() const {
  if (xs.rank() < 2) return {};
  return Shape(xs.shape().begin() + 1, xs.shape().end());
}

void Dataset::validate() const {
  if (xs.rank() < 2) throw FormatError("dataset samples must have rank >= 1");
  if (xs.dim(0) != ys.size()) throw FormatError("dataset sample/label count mismatch");
  if (num_classes < 2) throw FormatError("dataset needs at least two classes");
  for (int y : ys) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) throw FormatError("dataset label out of range");
  }
  for (float v : xs.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw FormatError("dataset value outside [0, 1]");
  }
}

Dataset Dataset::subset(std::span<const std::size_t> idx) const {
  Dataset out;
  out.xs = xs.gather_rows(idx);
  out.ys.reserve(idx.size());
  for (auto i : idx) out.ys.push_back(ys.at(i));
  out.num_classes = num_classes;
  out.name = name;
  return out;
}

MoonPoints two_moons_points(std::size_t n, double noise, std::uint64_t seed) {
  if (n == 0 || n % 2 != 0) throw ParameterError("two-moons needs a positive even n, got " + std::to_string(n));
  if (!(noise >= 0.0)) throw ParameterError("noise must be >= 0");
  Rng rng(seed);
  const std::size_t half = n / 2;
  MoonPoints pts;
  pts.x.reserve(n);
  pts.y.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = i % half;
    const double t = half > 1 ? std::numbers::pi * static_cast<double>(k) / static_cast<double>(half - 1) : 0.0;
    const bool inner = i >= half;
    double px = inner ? 1.0 - std::cos(t) : std::cos(t);
    double py = inner ? 0.5 - std::sin(t) : std::sin(t);
    if (noise > 0.0) {
      px += noise * rng.normal();
      py += noise * rng.normal();
    }
    pts.x.push_back(px);
    pts.y.push_back(py);
    pts.labels.push_back(inner ? 1 : 0);
  }
  return pts;
}

Dataset gen_two_moons(std::size_t n, double noise, std::uint64_t seed) {
  const MoonPoints pts = two_moons_points(n, noise, seed);
  const double pad = 3.0 * noise;
  const double x0 = -1.0 - pad, y0 = -0.5 - pad;
  const double span_x = 3.0 + 2.0 * pad, span_y = 1.5 + 2.0 * pad;
  const double scale = 1.0 / span_x;
  const double y_shift = 0.5 * (1.0 - span_y * scale);
  Tensor xs(Shape{n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    xs.at(i, 0) = static_cast<float>(std::clamp((pts.x[i] - x0) * scale, 0.0, 1.0));
    xs.at(i, 1) = static_cast<float>(std::clamp((pts.y[i] - y0) * scale + y_shift, 0.0, 1.0));
  }
  Dataset ds{std::move(xs), pts.labels, 2, "two-moons"};
  return shuffled(std::move(ds), seed);
}

Dataset gen_blobs(std::size_t n, std::size_t classes, double spread, std::uint64_t seed) {
  if (n == 0 || classes < 2) throw ParameterError("blobs need n > 0 and at least two classes");
  if (!(spread >= 0.0)) throw ParameterError("spread must be >= 0");
  Rng rng(seed);
  Tensor xs(Shape{n, 2});
  Labels ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % classes;
    const double a = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(classes);
    xs.at(i, 0) = static_cast<float>(std::clamp(0.5 + 0.3 * std::cos(a) + spread * rng.normal(), 0.0, 1.0));
    xs.at(i, 1) = static_cast<float>(std::clamp(0.5 + 0.3 * std::sin(a) + spread * rng.normal(), 0.0, 1.0));
    ys[i] = static_cast<int>(c);
  }
  return shuffled(Dataset{std::move(xs), std::move(ys), classes, "blobs"}, seed);
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const std::string img = read_file(images);
  const std::string lab = read_file(labels);
  if (read_be32(img, 0) != 0x00000803u) throw FormatError("bad IDX image magic in '" + images.string() + "'");
  if (read_be32(lab, 0) != 0x00000801u) throw FormatError("bad IDX label magic in '" + labels.string() + "'");
  const std::size_t n = read_be32(img, 4), rows = read_be32(img, 8), cols = read_be32(img, 12);
  const std::size_t nl = read_be32(lab, 4);
  if (n != nl) {
    throw FormatError("IDX image/label count mismatch: " + std::to_string(n) + " vs " + std::to_string(nl));
  }
  if (img.size() != 16 + n * rows * cols) throw FormatError("IDX image payload size mismatch");
  if (lab.size() != 8 + n) throw FormatError("IDX label payload size mismatch");
  Tensor xs(Shape{n, 1, rows, cols});
  for (std::size_t i = 0; i < xs.numel(); ++i) {
    xs[i] = static_cast<float>(static_cast<unsigned char>(img[16 + i])) / 255.0f;
  }
  Labels ys(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ys[i] = static_cast<unsigned char>(lab[8 + i]);
    max_label = std::max(max_label, ys[i]);
  }
  Dataset ds{std::move(xs), std::move(ys), std::max<std::size_t>(10, static_cast<std::size_t>(max_label) + 1), "idx"};
  return ds;
}

Dataset load_cifar10_bin(const std::vector<std::filesystem::path>& paths) {
  constexpr std::size_t kRecord = 3073, kPixels = 3072;
  std::vector<float> data;
  Labels ys;
  for (const auto& p : paths) {
    const std::string bytes = read_file(p);
    if (bytes.size() % kRecord != 0) {
      throw FormatError("'" + p.string() + "' size " + std::to_string(bytes.size()) + " is not a multiple of 3073");
    }
    for (std::size_t off = 0; off < bytes.size(); off += kRecord) {
      const int label = static_cast<unsigned char>(bytes[off]);
      if (label >= 10) throw FormatError("CIFAR-10 label " + std::to_string(label) + " out of range");
      ys.push_back(label);
      for (std::size_t k = 0; k < kPixels; ++k) {
        data.push_back(static_cast<float>(static_cast<unsigned char>(bytes[off + 1 + k])) / 255.0f);
      }
    }
  }
  const std::size_t n = ys.size();
  return Dataset{Tensor(Shape{n, 3, 32, 32}, std::move(data)), std::move(ys), 10, "cifar10"};
}

void save_dataset_csv(const Dataset& ds, const std::filesystem::path& path) {
  ds.validate();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open '" + path.string() + "' for writing");
  os << "# shape=" << shape_to_string(ds.sample_shape()) << " classes=" << ds.num_classes
     << " name=" << (ds.name.empty() ? "dataset" : ds.name) << '\n';
  std::array<char, 32> buf{};
  for (std::size_t i = 0; i < ds.size(); ++i) {
    os << ds.ys[i];
    for (float v : ds.xs.row(i)) {
      std::snprintf(buf.data(), buf.size(), "%.9g", static_cast<double>(v));
      os << ',' << buf.data();
    }
    os << '\n';
  }
  if (!os) throw Error("write failed for '" + path.string() + "'");
}

Dataset load_dataset_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open dataset '" + path.string() + "'");
  std::string line;
  if (!std::getline(is, line) || line.rfind("# ", 0) != 0) throw FormatError("missing dataset header");
  Shape sample;
  std::size_t classes = 0;
  std::string name = "dataset";
  {
    std::stringstream ss(line.substr(2));
    std::string tok;
    while (ss >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) throw FormatError("bad dataset header token '" + tok + "'");
      const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
      try {
        if (key == "shape") {
          std::stringstream sv(val);
          std::string part;
          while (std::getline(sv, part, 'x')) sample.push_back(std::stoul(part));
        } else if (key == "classes") {
          classes = std::stoul(val);
        } else if (key == "name") {
          name = val;
        }
      } catch (const std::logic_error&) {
        throw FormatError("bad dataset header value '" + tok + "'");
      }
    }
  }
  const std::size_t per = shape_numel(sample);
  if (sample.empty() || per == 0) throw FormatError("dataset header lacks a sample shape");
  std::vector<float> data;
  Labels ys;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const char* p = line.c_str();
    char* end = nullptr;
    const long label = std::strtol(p, &end, 10);
    if (end == p) throw FormatError("bad label in dataset row " + std::to_string(ys.size() + 1));
    ys.push_back(static_cast<int>(label));
    p = end;
    for (std::size_t k = 0; k < per; ++k) {
      if (*p != ',') throw FormatError("short dataset row " + std::to_string(ys.size()));
      ++p;
      const float v = std::strtof(p, &end);
      if (end == p) throw FormatError("bad value in dataset row " + std::to_string(ys.size()));
      data.push_back(v);
      p = end;
    }
    if (*p != '\0') throw FormatError("long dataset row " + std::to_string(ys.size()));
  }
  Shape full{ys.size()};
  full.insert(full.end(), sample.begin(), sample.end());
  Dataset ds{Tensor(std::move(full), std::move(data)), std::move(ys), classes, name};
  ds.validate();
  return ds;
}

void AugmentConfig::validate() const {
  if (crop_pad < 0) throw ParameterError("crop_pad must be >= 0");
  if (!(hflip_prob >= 0.0 && hflip_prob <= 1.0)) throw ParameterError("hflip_prob must lie in [0, 1]");
}

Tensor crop_image(const Tensor& img, int pad, int off_r, int off_c) {
  if (img.rank() != 3) throw ShapeError("crop_image expects [C, H, W]");
  const auto ch = img.dim(0), h = img.dim(1), w = img.dim(2);
  if (pad < 0 || off_r < 0 || off_c < 0 || off_r > 2 * pad || off_c > 2 * pad) {
    throw ParameterError("crop offset outside the padded image");
  }
  Tensor out(img.shape());
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t r = 0; r < h; ++r) {
      const long sr = static_cast<long>(r) + off_r - pad;
      if (sr < 0 || sr >= static_cast<long>(h)) continue;
      for (std::size_t q = 0; q < w; ++q) {
        const long sc = static_cast<long>(q) + off_c - pad;
        if (sc < 0 || sc >= static_cast<long>(w)) continue;
        out[(c * h + r) * w + q] = img[(c * h + static_cast<std::size_t>(sr)) * w + static_cast<std::size_t>(sc)];
      }
    }
  }
  return out;
}

Tensor hflip_image(const Tensor& img) {
  if (img.rank() != 3) throw ShapeError("hflip_image expects [C, H, W]");
  const auto ch = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor out(img.shape());
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t q = 0; q < w; ++q) out[(c * h + r) * w + q] = img[(c * h + r) * w + (w - 1 - q)];
    }
  }
  return out;
}

Tensor augment(const Tensor& batch, const AugmentConfig& cfg, std::uint64_t epoch, std::uint64_t batch_index) {
  cfg.validate();
  if (batch.rank() != 4) return batch;
  const auto h = batch.dim(2), w = batch.dim(3);
  if (static_cast<std::size_t>(cfg.crop_pad) >= std::min(h, w)) {
    throw ParameterError("crop_pad must be smaller than the image side");
  }
  Tensor out = batch;
  const Shape img_shape{batch.dim(1), h, w};
  const std::uint64_t stream = derive_seed(derive_seed(cfg.seed, epoch), batch_index);
  for (std::size_t i = 0; i < batch.dim(0); ++i) {
    Rng rng(derive_seed(stream, i));
    auto r = batch.row(i);
    Tensor img(img_shape, std::vector<float>(r.begin(), r.end()));
    if (cfg.crop_pad > 0) {
      const auto span = static_cast<std::uint64_t>(2 * cfg.crop_pad + 1);
      const int off_r = static_cast<int>(rng.below(span));
      const int off_c = static_cast<int>(rng.below(span));
      img = crop_image(img, cfg.crop_pad, off_r, off_c);
    }
    if (rng.bernoulli(cfg.hflip_prob)) img = hflip_image(img);
    std::copy(img.data().begin(), img.data().end(), out.row(i).begin());
  }
  return out;
}

BatchIterator::BatchIterator(const Dataset& ds, std::size_t batch_size, bool shuffle, std::uint64_t seed)
    : ds_(&ds), batch_size_(batch_size) {
  if (batch_size == 0) throw ParameterError("batch size must be >= 1");
  if (shuffle) {
    Rng rng(seed);
    order_ = rng.permutation(ds.size());
  } else {
    order_.resize(ds.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  }
}

std::size_t BatchIterator::num_batches() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

Batch BatchIterator::next() {
  if (done()) throw RangeError("batch iterator exhausted");
  const std::size_t end = std::min(pos_ + batch_size_, order_.size());
  Batch b;
  b.indices.assign(order_.begin() + static_cast<std::ptrdiff_t>(pos_), order_.begin() + static_cast<std::ptrdiff_t>(end));
  b.x = ds_->xs.gather_rows(b.indices);
  b.y.reserve(b.indices.size());
  for (auto i : b.indices) b.y.push_back(ds_->ys[i]);
  pos_ = end;
  return b;
}

std::vector<Batch> batches(const Dataset& ds, std::size_t batch_size, bool shuffle, std::uint64_t seed) {
  BatchIterator it(ds, batch_size, shuffle, seed);
  std::vector<Batch> out;
  out.reserve(it.num_batches());
  while (!it.done()) out.push_back(it.next());
  return out;
}

}  // namespace ciard
