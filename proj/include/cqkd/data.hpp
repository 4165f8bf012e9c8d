#pragma once

// Synthetic image classification data, average-pool downsampling and the
// dataset container.
//
// File layout ("CQDS"), little-endian:
//   magic | u32 version | u32 n | u32 K | u32 h_full | u32 factor | u64 seed |
//   u32 split | n x (full pixels f64, low pixels f64, u16 label)

#include "cqkd/prob_math.hpp"

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace cqkd {

using PixelGrid = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Single-channel image, row-major, values in [0, 1].
struct Image {
  PixelGrid pixels;

  Eigen::Index height() const { return pixels.rows(); }
  Eigen::Index width() const { return pixels.cols(); }
  Eigen::Map<const Vector<double>> flat() const { return {pixels.data(), pixels.size()}; }

  bool operator==(const Image& other) const {
    return pixels.rows() == other.pixels.rows() && pixels.cols() == other.pixels.cols() &&
           pixels == other.pixels;
  }
};

void check_image(const Image& img);

enum class Split : std::uint32_t { train = 0, validation = 1 };
enum class Resolution { full, low };

const char* to_string(Split split);

struct LabeledPair {
  Image full;
  Image low;
  int label = 0;

  bool operator==(const LabeledPair&) const = default;
};

struct Dataset {
  std::vector<LabeledPair> pairs;
  int num_classes = 0;
  int h_full = 0;
  int factor = 1;
  Split split = Split::train;
  std::uint64_t seed = 0;

  std::size_t size() const { return pairs.size(); }
  int h_low() const { return h_full / factor; }
  Eigen::Index input_size(Resolution res) const {
    const Eigen::Index h = res == Resolution::full ? h_full : h_low();
    return h * h;
  }

  bool operator==(const Dataset&) const = default;
};

/// Noise-free template of class k at h x h.
Image render_prototype(int k, int h);

/// n samples, labels round-robin over K, each the class prototype plus
/// N(0, noise_sigma) pixel noise clamped to [0, 1]. Pairs carry low == full
/// (factor 1) until make_pairs is applied.
Dataset generate_synthetic(int n, int num_classes, int h_full, double noise_sigma, std::uint64_t seed,
                           Split split = Split::train);

/// Non-overlapping factor x factor average pooling.
Image downsample(const Image& img, int factor);

/// Re-derives every low image from its full image at the given factor.
Dataset make_pairs(const Dataset& dataset, int factor);

/// Seeded permutation of [0, n) keyed on (shuffle_seed, epoch), cut into
/// batches; the last batch may be short.
std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size, std::uint64_t epoch,
                                              std::uint64_t shuffle_seed);
std::vector<std::vector<std::size_t>> batches(const Dataset& dataset, std::size_t batch_size,
                                              std::uint64_t epoch, std::uint64_t shuffle_seed);

/// Network inputs are pixels mapped as (x - kInputCenter) * kInputScale.
inline constexpr double kInputCenter = 0.5;
inline constexpr double kInputScale = 4.0;

/// Flattened, normalised images of the selected pairs, one column per sample.
Matrix<double> stack_inputs(const Dataset& dataset, Resolution res, std::span<const std::size_t> indices);
Matrix<double> stack_inputs(const Dataset& dataset, Resolution res);
std::vector<int> labels(const Dataset& dataset);

inline constexpr std::uint32_t kDatasetFormatVersion = 1;

std::vector<unsigned char> encode_dataset(const Dataset& dataset);
/// Throws FormatError or TruncationError.
Dataset decode_dataset(const std::vector<unsigned char>& bytes);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

/// One row per line, space-separated.
std::string image_to_ascii(const Image& img);
void write_image_ascii(const Image& img, const std::filesystem::path& path);

}  // namespace cqkd
