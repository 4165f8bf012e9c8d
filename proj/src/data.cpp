#include "cqkd/data.hpp"

#include "cqkd/binary_io.hpp"
#include "cqkd/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace cqkd {

namespace {

constexpr std::string_view kMagic = "CQDS";
constexpr double kMid = 0.5;
constexpr double kCoarseContrast = 0.2;
constexpr double kDetail = 0.15;
constexpr double kTilt = 0.004;

double sign_of(bool b) { return b ? 1.0 : -1.0; }

}  // namespace

void check_image(const Image& img) {
  if (img.height() < 1 || img.width() < 1) throw std::invalid_argument("image must be at least 1x1");
  if (!img.pixels.allFinite() || (img.pixels.array() < 0.0).any() || (img.pixels.array() > 1.0).any()) {
    throw std::invalid_argument("image pixels must lie in [0, 1]");
  }
}

const char* to_string(Split split) { return split == Split::train ? "train" : "validation"; }

// Classes come in pairs (2p, 2p + 1). Each pair has its own coarse shape
// that survives any pooling. The two members differ by a fine checkerboard
// of opposite phase, one pixel wide for even pairs (lost at 2x pooling) and
// two pixels wide for odd pairs (lost at 4x), plus a faint left/right
// brightness tilt that survives pooling. Once the checker is pooled away only
// the tilt separates the members, so low-resolution inputs carry weak
// evidence rather than none. Shapes repeat every five pairs at lower
// contrast.
Image render_prototype(int k, int h) {
  if (k < 0) throw std::invalid_argument("class index must be non-negative");
  if (h < 8) throw std::invalid_argument("prototype side must be at least 8");
  const int pair = k / 2;
  const double member = k % 2 == 0 ? 1.0 : -1.0;
  const int shape = pair % 5;
  const double coarse = kCoarseContrast / (1.0 + pair / 5);
  const int cell = pair % 2 == 0 ? 1 : 2;
  const int band = h / 4;
  Image img{PixelGrid(h, h)};
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < h; ++c) {
      double base = 0.0;
      switch (shape) {
        case 0: base = sign_of((r / band) % 2 == 0); break;
        case 1: base = sign_of((c / band) % 2 == 0); break;
        case 2: base = static_cast<double>(r + c) / (h - 1) - 1.0; break;
        case 3: base = sign_of((r / band + c / band) % 2 == 0); break;
        case 4: base = sign_of(r >= band && r < h - band && c >= band && c < h - band); break;
      }
      const double tilt = kTilt * member * sign_of(c < h / 2);
      const double detail = kDetail * member * sign_of((r / cell + c / cell) % 2 == 0);
      img.pixels(r, c) = kMid + coarse * base + tilt + detail;
    }
  }
  return img;
}

Dataset generate_synthetic(int n, int num_classes, int h_full, double noise_sigma, std::uint64_t seed,
                           Split split) {
  if (num_classes < 2) throw std::invalid_argument("need at least 2 classes");
  if (num_classes > 65535) throw std::invalid_argument("at most 65535 classes");
  if (n < num_classes) throw std::invalid_argument("n must be at least the class count");
  if (h_full < 8) throw std::invalid_argument("h_full must be at least 8");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw std::invalid_argument("noise_sigma must be finite and non-negative");
  }

  std::vector<Image> prototypes;
  prototypes.reserve(static_cast<std::size_t>(num_classes));
  for (int k = 0; k < num_classes; ++k) prototypes.push_back(render_prototype(k, h_full));

  Dataset ds;
  ds.num_classes = num_classes;
  ds.h_full = h_full;
  ds.factor = 1;
  ds.split = split;
  ds.seed = seed;
  ds.pairs.reserve(static_cast<std::size_t>(n));

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, noise_sigma > 0.0 ? noise_sigma : 1.0);
  for (int i = 0; i < n; ++i) {
    const int label = i % num_classes;
    Image img = prototypes[static_cast<std::size_t>(label)];
    if (noise_sigma > 0.0) {
      for (Eigen::Index r = 0; r < img.height(); ++r) {
        for (Eigen::Index c = 0; c < img.width(); ++c) {
          img.pixels(r, c) = std::clamp(img.pixels(r, c) + noise(rng), 0.0, 1.0);
        }
      }
    }
    ds.pairs.push_back({img, img, label});
  }
  return ds;
}

Image downsample(const Image& img, int factor) {
  if (factor < 1) throw std::invalid_argument("downsample factor must be at least 1");
  if (img.height() % factor != 0 || img.width() % factor != 0) {
    throw std::invalid_argument("image " + std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                                " is not divisible by factor " + std::to_string(factor));
  }
  if (factor == 1) return img;
  const Eigen::Index h = img.height() / factor;
  const Eigen::Index w = img.width() / factor;
  Image out{PixelGrid(h, w)};
  for (Eigen::Index r = 0; r < h; ++r) {
    for (Eigen::Index c = 0; c < w; ++c) {
      out.pixels(r, c) = std::clamp(img.pixels.block(r * factor, c * factor, factor, factor).mean(), 0.0, 1.0);
    }
  }
  return out;
}

Dataset make_pairs(const Dataset& dataset, int factor) {
  if (factor < 1 || dataset.h_full % factor != 0) {
    throw std::invalid_argument("h_full " + std::to_string(dataset.h_full) + " is not divisible by factor " +
                                std::to_string(factor));
  }
  Dataset out = dataset;
  out.factor = factor;
  for (auto& pair : out.pairs) pair.low = downsample(pair.full, factor);
  return out;
}

std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size, std::uint64_t epoch,
                                              std::uint64_t shuffle_seed) {
  if (n == 0) throw std::invalid_argument("cannot batch an empty dataset");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
  std::seed_seq seq{static_cast<std::uint32_t>(shuffle_seed), static_cast<std::uint32_t>(shuffle_seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
  std::mt19937_64 rng(seq);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t stop = std::min(n, start + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(stop));
  }
  return out;
}

std::vector<std::vector<std::size_t>> batches(const Dataset& dataset, std::size_t batch_size,
                                              std::uint64_t epoch, std::uint64_t shuffle_seed) {
  return batches(dataset.size(), batch_size, epoch, shuffle_seed);
}

Matrix<double> stack_inputs(const Dataset& dataset, Resolution res, std::span<const std::size_t> indices) {
  Matrix<double> x(dataset.input_size(res), static_cast<Eigen::Index>(indices.size()));
  for (std::size_t j = 0; j < indices.size(); ++j) {
    const LabeledPair& pair = dataset.pairs.at(indices[j]);
    x.col(static_cast<Eigen::Index>(j)) =
        ((res == Resolution::full ? pair.full : pair.low).flat().array() - kInputCenter) * kInputScale;
  }
  return x;
}

Matrix<double> stack_inputs(const Dataset& dataset, Resolution res) {
  std::vector<std::size_t> all(dataset.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return stack_inputs(dataset, res, all);
}

std::vector<int> labels(const Dataset& dataset) {
  std::vector<int> y;
  y.reserve(dataset.size());
  for (const auto& pair : dataset.pairs) y.push_back(pair.label);
  return y;
}

std::vector<unsigned char> encode_dataset(const Dataset& dataset) {
  binary::Writer w;
  w.bytes(kMagic);
  w.u32(kDatasetFormatVersion);
  w.u32(static_cast<std::uint32_t>(dataset.size()));
  w.u32(static_cast<std::uint32_t>(dataset.num_classes));
  w.u32(static_cast<std::uint32_t>(dataset.h_full));
  w.u32(static_cast<std::uint32_t>(dataset.factor));
  w.u64(dataset.seed);
  w.u32(static_cast<std::uint32_t>(dataset.split));
  const Eigen::Index hl = dataset.h_low();
  for (const auto& pair : dataset.pairs) {
    if (pair.full.height() != dataset.h_full || pair.full.width() != dataset.h_full ||
        pair.low.height() != hl || pair.low.width() != hl) {
      throw std::invalid_argument("pair dimensions disagree with dataset header");
    }
    for (Eigen::Index i = 0; i < pair.full.pixels.size(); ++i) w.f64(pair.full.pixels.data()[i]);
    for (Eigen::Index i = 0; i < pair.low.pixels.size(); ++i) w.f64(pair.low.pixels.data()[i]);
    w.u16(static_cast<std::uint16_t>(pair.label));
  }
  return w.buffer();
}

Dataset decode_dataset(const std::vector<unsigned char>& bytes) {
  binary::Reader r(bytes);
  if (r.size() < kMagic.size() || r.bytes(kMagic.size()) != kMagic) {
    throw FormatError("not a dataset file (bad magic bytes)");
  }
  const std::uint32_t version = r.u32();
  if (version != kDatasetFormatVersion) {
    throw FormatError("unsupported dataset format version " + std::to_string(version));
  }
  Dataset ds;
  const std::uint32_t n = r.u32();
  const std::uint32_t k = r.u32();
  const std::uint32_t h = r.u32();
  const std::uint32_t f = r.u32();
  ds.seed = r.u64();
  const std::uint32_t split = r.u32();
  if (k < 2 || k > 65535) throw FormatError("invalid class count " + std::to_string(k));
  if (h < 1 || h > 4096) throw FormatError("invalid image side " + std::to_string(h));
  if (f < 1 || h % f != 0) throw FormatError("invalid downsample factor " + std::to_string(f));
  if (split > 1) throw FormatError("invalid split tag " + std::to_string(split));
  ds.num_classes = static_cast<int>(k);
  ds.h_full = static_cast<int>(h);
  ds.factor = static_cast<int>(f);
  ds.split = static_cast<Split>(split);

  const std::size_t hl = h / f;
  const std::size_t per_pair = (std::size_t{h} * h + hl * hl) * 8 + 2;
  r.require(per_pair * n);
  ds.pairs.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    LabeledPair pair{Image{PixelGrid(h, h)}, Image{PixelGrid(hl, hl)}, 0};
    for (Eigen::Index j = 0; j < pair.full.pixels.size(); ++j) pair.full.pixels.data()[j] = r.f64();
    for (Eigen::Index j = 0; j < pair.low.pixels.size(); ++j) pair.low.pixels.data()[j] = r.f64();
    const std::uint16_t label = r.u16();
    if (label >= k) throw FormatError("sample " + std::to_string(i) + " has label out of range");
    pair.label = label;
    try {
      check_image(pair.full);
      check_image(pair.low);
    } catch (const std::invalid_argument& e) {
      throw FormatError("sample " + std::to_string(i) + ": " + e.what());
    }
    ds.pairs.push_back(std::move(pair));
  }
  if (r.remaining() != 0) {
    throw FormatError(std::to_string(r.remaining()) + " trailing bytes after dataset payload");
  }
  return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  binary::write_file(path, encode_dataset(dataset));
}

Dataset load_dataset(const std::filesystem::path& path) { return decode_dataset(binary::read_file(path)); }

std::string image_to_ascii(const Image& img) {
  std::ostringstream os;
  os.precision(17);
  for (Eigen::Index r = 0; r < img.height(); ++r) {
    for (Eigen::Index c = 0; c < img.width(); ++c) {
      if (c > 0) os << ' ';
      os << img.pixels(r, c);
    }
    os << '\n';
  }
  return os.str();
}

void write_image_ascii(const Image& img, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << image_to_ascii(img);
  if (!out) throw IoError("write failed on " + path.string());
}

}  // namespace cqkd
