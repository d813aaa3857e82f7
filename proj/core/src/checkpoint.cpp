#include "tssl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace tssl {

namespace {

constexpr char kMagic[4] = {'T', 'S', 'S', 'L'};
constexpr std::uint16_t kVersion = 1;

template <typename T>
void push_le(std::vector<unsigned char>& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i)
    out.push_back(static_cast<unsigned char>((value >> (8 * i)) & 0xff));
}

template <typename T>
T pull_le(const unsigned char* p) {
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    value |= static_cast<T>(p[i]) << (8 * i);
  return value;
}

}  // namespace

void ByteWriter::u16(std::uint16_t v) { push_le(bytes_, v); }
void ByteWriter::u32(std::uint32_t v) { push_le(bytes_, v); }
void ByteWriter::u64(std::uint64_t v) { push_le(bytes_, v); }
void ByteWriter::f32(float v) { push_le(bytes_, std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) { push_le(bytes_, std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::str(const std::string& s) {
  u32(static_cast<std::uint32_t>(s.size()));
  bytes_.insert(bytes_.end(), s.begin(), s.end());
}

void ByteWriter::f32_array(const std::vector<double>& values) {
  u64(values.size());
  for (double v : values) f32(static_cast<float>(v));
}

void ByteWriter::f64_array(const std::vector<double>& values) {
  u64(values.size());
  for (double v : values) f64(v);
}

void ByteReader::need(std::size_t n) {
  if (pos_ + n > size_)
    fail(ErrorKind::schema, "truncated stream: need ", n, " bytes at offset ",
         pos_, ", have ", size_ - pos_);
}

std::uint8_t ByteReader::u8() {
  need(1);
  return data_[pos_++];
}
std::uint16_t ByteReader::u16() {
  need(2);
  auto v = pull_le<std::uint16_t>(data_ + pos_);
  pos_ += 2;
  return v;
}
std::uint32_t ByteReader::u32() {
  need(4);
  auto v = pull_le<std::uint32_t>(data_ + pos_);
  pos_ += 4;
  return v;
}
std::uint64_t ByteReader::u64() {
  need(8);
  auto v = pull_le<std::uint64_t>(data_ + pos_);
  pos_ += 8;
  return v;
}
float ByteReader::f32() { return std::bit_cast<float>(u32()); }
double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string ByteReader::str() {
  const std::uint32_t n = u32();
  need(n);
  std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
  pos_ += n;
  return s;
}

std::vector<double> ByteReader::f32_array() {
  const std::uint64_t n = u64();
  std::vector<double> out;
  out.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) out.push_back(static_cast<double>(f32()));
  return out;
}

std::vector<double> ByteReader::f64_array() {
  const std::uint64_t n = u64();
  std::vector<double> out;
  out.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) out.push_back(f64());
  return out;
}

namespace {

// Payload: spec counts then every parameter array in block order.
std::vector<unsigned char> encoder_payload(const nn::MlpSpec& spec,
                                           const nn::ParamStore& params) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(spec.input_dim));
  w.u32(static_cast<std::uint32_t>(spec.hidden_dims.size()));
  for (std::size_t d : spec.hidden_dims) w.u32(static_cast<std::uint32_t>(d));
  w.u8(spec.use_batchnorm ? 1 : 0);
  w.u8(spec.activation == nn::Activation::relu ? 1 : 0);
  w.u8(spec.plain_last ? 1 : 0);

  std::uint32_t n_arrays = 0;
  for (std::size_t i = 0; i < spec.block_count(); ++i)
    n_arrays += 2 + (spec.block_has_batchnorm(i) ? 4 : 0);
  w.u32(n_arrays);
  for (std::size_t i = 0; i < spec.block_count(); ++i) {
    w.f32_array(params.dense[i].weight.values);
    w.f32_array(params.dense[i].bias);
    if (spec.block_has_batchnorm(i)) {
      const auto& bn = params.batchnorm[spec.batchnorm_index(i)];
      w.f32_array(bn.gamma);
      w.f32_array(bn.beta);
      w.f32_array(bn.running_mean);
      w.f32_array(bn.running_var);
    }
  }
  return w.take();
}

}  // namespace

std::uint64_t encoder_checksum(const nn::MlpSpec& spec,
                               const nn::ParamStore& params) {
  const auto payload = encoder_payload(spec, params);
  return fnv1a64(payload.data(), payload.size());
}

void save_encoder(const std::string& path, const nn::MlpSpec& spec,
                  const nn::ParamStore& params) {
  const auto payload = encoder_payload(spec, params);
  ByteWriter w;
  for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u16(kVersion);
  std::vector<unsigned char> bytes = w.take();
  bytes.insert(bytes.end(), payload.begin(), payload.end());
  push_le(bytes, fnv1a64(payload.data(), payload.size()));
  write_file(path, bytes);
}

std::pair<nn::MlpSpec, nn::ParamStore> load_encoder(const std::string& path) {
  const auto bytes = read_file(path);
  if (bytes.size() < 4 + 2 + 8 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    fail(ErrorKind::schema, path, ": not a TSSL checkpoint");
  ByteReader header(bytes.data() + 4, 2);
  if (header.u16() != kVersion)
    fail(ErrorKind::schema, path, ": unsupported checkpoint version");

  const std::size_t payload_size = bytes.size() - 4 - 2 - 8;
  const unsigned char* payload = bytes.data() + 6;
  const std::uint64_t stored = pull_le<std::uint64_t>(bytes.data() + bytes.size() - 8);
  if (stored != fnv1a64(payload, payload_size))
    fail(ErrorKind::schema, path, ": checkpoint checksum mismatch");

  ByteReader r(payload, payload_size);
  nn::MlpSpec spec;
  spec.input_dim = r.u32();
  const std::uint32_t blocks = r.u32();
  spec.hidden_dims.resize(blocks);
  for (auto& d : spec.hidden_dims) d = r.u32();
  spec.use_batchnorm = r.u8() != 0;
  spec.activation = r.u8() != 0 ? nn::Activation::relu : nn::Activation::identity;
  spec.plain_last = r.u8() != 0;
  spec.validate();

  const std::uint32_t n_arrays = r.u32();
  std::uint32_t expected = 0;
  for (std::size_t i = 0; i < spec.block_count(); ++i)
    expected += 2 + (spec.block_has_batchnorm(i) ? 4 : 0);
  if (n_arrays != expected)
    fail(ErrorKind::schema, path, ": checkpoint holds ", n_arrays,
         " arrays, spec implies ", expected);

  nn::ParamStore params;
  for (std::size_t i = 0; i < spec.block_count(); ++i) {
    nn::DenseLayer layer;
    std::vector<double> w = r.f32_array();
    const std::size_t out = spec.hidden_dims[i], in = spec.block_in_dim(i);
    if (w.size() != out * in)
      fail(ErrorKind::schema, path, ": block ", i, " weight length ", w.size(),
           ", expected ", out * in);
    layer.weight = Matrix(out, in);
    layer.weight.values = std::move(w);
    layer.bias = r.f32_array();
    if (layer.bias.size() != out)
      fail(ErrorKind::schema, path, ": block ", i, " bias length mismatch");
    params.dense.push_back(std::move(layer));
    if (spec.block_has_batchnorm(i)) {
      nn::BatchNormLayer bn;
      bn.gamma = r.f32_array();
      bn.beta = r.f32_array();
      bn.running_mean = r.f32_array();
      bn.running_var = r.f32_array();
      if (bn.gamma.size() != out || bn.beta.size() != out ||
          bn.running_mean.size() != out || bn.running_var.size() != out)
        fail(ErrorKind::schema, path, ": block ", i, " batch-norm length mismatch");
      params.batchnorm.push_back(std::move(bn));
    }
  }
  return {std::move(spec), std::move(params)};
}

void write_file(const std::string& path, const std::vector<unsigned char>& bytes) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot open for writing: ", path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::io, "write failed: ", path);
}

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) fail(ErrorKind::io, "cannot open: ", path);
  const std::streamsize size = in.tellg();
  in.seekg(0);
  std::vector<unsigned char> bytes(static_cast<std::size_t>(size));
  in.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!in) fail(ErrorKind::io, "read failed: ", path);
  return bytes;
}

}  // namespace tssl
