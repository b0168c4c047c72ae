#pragma once

// Token container (.apcs).
//
//   bytes 0..3   "APCS"
//   u32 version (1)
//   u32 sample_rate, frame_shift, frame_length, fft_size, downsample,
//       stages, codebook_size, code_dim, frames          (little-endian)
//   payload: ceil(log2 codebook_size) bits per index, most significant bit
//            first, frame by frame and stage by stage within a frame,
//            zero-padded to a whole byte.

#include <cstdint>
#include <span>
#include <vector>

#include "apcodec/quantizer.hpp"

namespace apcodec {

struct StreamHeader {
  std::uint32_t sample_rate = 0;
  std::uint32_t frame_shift = 0;
  std::uint32_t frame_length = 0;
  std::uint32_t fft_size = 0;
  std::uint32_t downsample = 0;
  std::uint32_t stages = 0;
  std::uint32_t codebook_size = 0;
  std::uint32_t code_dim = 0;
  std::uint32_t frames = 0;

  bool operator==(const StreamHeader&) const = default;
};

inline constexpr std::uint32_t kBitstreamVersion = 1;
inline constexpr std::size_t kBitstreamHeaderBytes = 4 + 4 + 9 * 4;

/// ceil(log2(codebook_size)) for codebook_size >= 2.
int bits_per_index(std::uint32_t codebook_size);
/// Payload size in bytes for the header's frame/stage/codebook counts.
std::size_t payload_bytes(const StreamHeader& header);

/// `tokens` is (stages x frames); the header's stages/frames must agree.
std::vector<std::uint8_t> pack_tokens(const StreamHeader& header, const TokenMatrix& tokens);

struct UnpackedStream {
  StreamHeader header;
  TokenMatrix tokens;
};

/// Throws BitstreamError with kind bad_magic, bad_version, truncated or invalid.
UnpackedStream unpack_tokens(std::span<const std::uint8_t> bytes);

}  // namespace apcodec
