#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tssl/nn.hpp"

namespace tssl {

/// Little-endian byte writer shared by the encoder checkpoint and the data
/// cache formats: explicit length prefixes, trailing FNV-1a64 checksum.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void str(const std::string& s);  // u32 length + raw bytes
  void f32_array(const std::vector<double>& values);  // u64 length + f32 data
  void f64_array(const std::vector<double>& values);

  const std::vector<unsigned char>& bytes() const { return bytes_; }
  std::vector<unsigned char> take() { return std::move(bytes_); }

 private:
  std::vector<unsigned char> bytes_;
};

class ByteReader {
 public:
  ByteReader(const unsigned char* data, std::size_t size)
      : data_(data), size_(size) {}

  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::string str();
  std::vector<double> f32_array();
  std::vector<double> f64_array();
  std::size_t offset() const { return pos_; }
  bool exhausted() const { return pos_ == size_; }

 private:
  void need(std::size_t n);
  const unsigned char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

/// Encoder checkpoint: magic "TSSL", u16 version, spec counts, parameter
/// arrays as length-prefixed little-endian f32, trailing u64 FNV-1a checksum
/// of the payload (everything after the version).
void save_encoder(const std::string& path, const nn::MlpSpec& spec,
                  const nn::ParamStore& params);
std::pair<nn::MlpSpec, nn::ParamStore> load_encoder(const std::string& path);

/// Checksum of the payload exactly as save_encoder would write it.
std::uint64_t encoder_checksum(const nn::MlpSpec& spec,
                               const nn::ParamStore& params);

void write_file(const std::string& path, const std::vector<unsigned char>& bytes);
std::vector<unsigned char> read_file(const std::string& path);

}  // namespace tssl
