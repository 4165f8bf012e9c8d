#include "cqkd/model_io.hpp"

#include "cqkd/binary_io.hpp"
#include "cqkd/errors.hpp"

#include <string>

namespace cqkd {

namespace {

constexpr std::string_view kMagic = "CQKD";
constexpr std::uint32_t kMaxLayers = 1024;

}  // namespace

std::vector<unsigned char> encode_model(const ModelParams<double>& model) {
  check_model(model);
  binary::Writer w;
  w.bytes(kMagic);
  w.u32(kModelFormatVersion);
  w.u32(static_cast<std::uint32_t>(model.layers.size()));
  for (const auto& layer : model.layers) {
    w.u32(static_cast<std::uint32_t>(layer.out()));
    w.u32(static_cast<std::uint32_t>(layer.in()));
  }
  for (const auto& layer : model.layers) {
    for (Eigen::Index r = 0; r < layer.out(); ++r) {
      for (Eigen::Index c = 0; c < layer.in(); ++c) w.f64(layer.weights(r, c));
    }
    for (Eigen::Index r = 0; r < layer.out(); ++r) w.f64(layer.bias(r));
  }
  return w.buffer();
}

ModelParams<double> decode_model(const std::vector<unsigned char>& bytes) {
  binary::Reader r(bytes);
  if (r.size() < kMagic.size() || r.bytes(kMagic.size()) != kMagic) {
    throw FormatError("not a model checkpoint (bad magic bytes)");
  }
  const std::uint32_t version = r.u32();
  if (version != kModelFormatVersion) {
    throw FormatError("unsupported model format version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  if (count == 0 || count > kMaxLayers) {
    throw FormatError("implausible layer count " + std::to_string(count));
  }
  r.require(std::size_t{8} * count);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> dims(count);
  std::size_t payload = 0;
  for (std::uint32_t l = 0; l < count; ++l) {
    dims[l].first = r.u32();
    dims[l].second = r.u32();
    if (dims[l].first == 0 || dims[l].second == 0) throw FormatError("zero-sized layer " + std::to_string(l));
    if (l > 0 && dims[l].second != dims[l - 1].first) {
      throw FormatError("layer " + std::to_string(l) + " input does not match previous output");
    }
    payload += (std::size_t{dims[l].first} * dims[l].second + dims[l].first) * 8;
  }
  r.require(payload);

  ModelParams<double> model;
  for (const auto& [out, in] : dims) {
    LayerParams<double> layer{Matrix<double>(out, in), Vector<double>(out)};
    for (Eigen::Index row = 0; row < out; ++row) {
      for (Eigen::Index col = 0; col < in; ++col) layer.weights(row, col) = r.f64();
    }
    for (Eigen::Index row = 0; row < out; ++row) layer.bias(row) = r.f64();
    model.layers.push_back(std::move(layer));
  }
  if (r.remaining() != 0) {
    throw FormatError(std::to_string(r.remaining()) + " trailing bytes after model payload");
  }
  return model;
}

void save_model(const ModelParams<double>& model, const std::filesystem::path& path) {
  binary::write_file(path, encode_model(model));
}

ModelParams<double> load_model(const std::filesystem::path& path) {
  return decode_model(binary::read_file(path));
}

}  // namespace cqkd
