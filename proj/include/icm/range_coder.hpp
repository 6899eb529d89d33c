#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace icm::rc {

constexpr int kTotalBits = 16;
constexpr std::uint32_t kTotal = 1u << kTotalBits;
/// Trailing zero bytes the encoder may drop and the decoder re-inserts.
constexpr int kImplicitZeros = 4;

/// Carry-propagating range encoder (64-bit low, 32-bit range, byte output).
class Encoder {
 public:
  /// Codes the interval [start, start + size) out of 2^16.
  void encode(std::uint32_t start, std::uint32_t size);
  /// Codes `count` raw bits of `value`, most significant first.
  void encode_bits(std::uint64_t value, int count);
  std::vector<std::uint8_t> finish();

 private:
  void shift_low();
  void normalize();
  std::uint64_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint8_t cache_ = 0;
  std::uint64_t cache_size_ = 1;
  std::vector<std::uint8_t> out_;
};

/// Reads the bytes written by Encoder plus at most kImplicitZeros trailing
/// zeros; reading further throws CorruptStreamError.
class Decoder {
 public:
  explicit Decoder(std::span<const std::uint8_t> bytes);
  /// Target value in [0, 2^16) for locating the next symbol.
  std::uint32_t peek();
  void consume(std::uint32_t start, std::uint32_t size);
  std::uint64_t decode_bits(int count);
  bool exhausted() const { return pos_ == bytes_.size(); }

 private:
  std::uint8_t next_byte();
  void normalize();
  std::span<const std::uint8_t> bytes_;
  size_t pos_ = 0;
  int overrun_ = 0;
  std::uint32_t code_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint32_t r_ = 0;
};

}  // namespace icm::rc
