#include "icm/range_coder.hpp"

#include "icm/errors.hpp"

namespace icm::rc {

namespace {
constexpr std::uint32_t kTop = 1u << 24;
}

void Encoder::shift_low() {
  if (static_cast<std::uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
    const auto carry = static_cast<std::uint8_t>(low_ >> 32);
    std::uint8_t temp = cache_;
    do {
      out_.push_back(static_cast<std::uint8_t>(temp + carry));
      temp = 0xFF;
    } while (--cache_size_ != 0);
    cache_ = static_cast<std::uint8_t>(static_cast<std::uint32_t>(low_) >> 24);
  }
  ++cache_size_;
  low_ = (low_ & 0x00FFFFFFu) << 8;
}

void Encoder::normalize() {
  while (range_ < kTop) {
    range_ <<= 8;
    shift_low();
  }
}

void Encoder::encode(std::uint32_t start, std::uint32_t size) {
  if (size == 0 || start + size > kTotal) throw ArgumentError("range coder: empty or out-of-range interval");
  const std::uint32_t r = range_ >> kTotalBits;
  low_ += static_cast<std::uint64_t>(r) * start;
  range_ = r * size;
  normalize();
}

void Encoder::encode_bits(std::uint64_t value, int count) {
  for (int i = count - 1; i >= 0; --i) {
    range_ >>= 1;
    if ((value >> i) & 1u) low_ += range_;
    normalize();
  }
}

std::vector<std::uint8_t> Encoder::finish() {
  // Any value in [low, low + range) identifies the stream; take the one with
  // the most trailing zero bits so the tail can be trimmed.
  const std::uint64_t hi = low_ + range_;
  for (int k = 32; k >= 0; --k) {
    const std::uint64_t mask = (std::uint64_t{1} << k) - 1;
    const std::uint64_t v = (low_ + mask) & ~mask;
    if (v >= low_ && v < hi) {
      low_ = v;
      break;
    }
  }
  for (int i = 0; i < 5; ++i) shift_low();
  // The first byte is always zero: the coded value lies in [0, 1).
  out_.erase(out_.begin());
  for (int i = 0; i < kImplicitZeros && !out_.empty() && out_.back() == 0; ++i) out_.pop_back();
  return std::move(out_);
}

Decoder::Decoder(std::span<const std::uint8_t> bytes) : bytes_(bytes) {
  for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
}

std::uint8_t Decoder::next_byte() {
  if (pos_ < bytes_.size()) return bytes_[pos_++];
  if (++overrun_ > kImplicitZeros) throw CorruptStreamError("range decoder ran past the end of the payload");
  return 0;
}

void Decoder::normalize() {
  while (range_ < kTop) {
    range_ <<= 8;
    code_ = (code_ << 8) | next_byte();
  }
}

std::uint32_t Decoder::peek() {
  r_ = range_ >> kTotalBits;
  const std::uint32_t v = code_ / r_;
  if (v >= kTotal) throw CorruptStreamError("range decoder state out of bounds");
  return v;
}

void Decoder::consume(std::uint32_t start, std::uint32_t size) {
  code_ -= r_ * start;
  range_ = r_ * size;
  normalize();
}

std::uint64_t Decoder::decode_bits(int count) {
  std::uint64_t v = 0;
  for (int i = 0; i < count; ++i) {
    range_ >>= 1;
    std::uint64_t bit = 0;
    if (code_ >= range_) {
      code_ -= range_;
      bit = 1;
    }
    v = (v << 1) | bit;
    normalize();
  }
  return v;
}

}  // namespace icm::rc
