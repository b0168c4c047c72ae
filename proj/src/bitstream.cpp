#include "apcodec/bitstream.hpp"

#include <cstring>
#include <string>

namespace apcodec {

namespace {

constexpr std::uint8_t kMagic[4] = {'A', 'P', 'C', 'S'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}

void validate(const StreamHeader& h) {
  if (h.codebook_size < 2) throw BitstreamError(BitstreamError::Kind::invalid, "codebook size must be >= 2");
  if (h.stages < 1) throw BitstreamError(BitstreamError::Kind::invalid, "stage count must be >= 1");
}

}  // namespace

int bits_per_index(std::uint32_t codebook_size) {
  if (codebook_size < 2) throw ConfigError("codebook size must be >= 2");
  int bits = 0;
  while ((std::uint64_t(1) << bits) < codebook_size) ++bits;
  return bits;
}

std::size_t payload_bytes(const StreamHeader& header) {
  const std::uint64_t bits =
      std::uint64_t(header.frames) * header.stages * std::uint64_t(bits_per_index(header.codebook_size));
  return std::size_t((bits + 7) / 8);
}

std::vector<std::uint8_t> pack_tokens(const StreamHeader& header, const TokenMatrix& tokens) {
  validate(header);
  if (tokens.rows() != Eigen::Index(header.stages) || tokens.cols() != Eigen::Index(header.frames))
    throw ValidationError("token matrix is " + std::to_string(tokens.rows()) + " x " +
                          std::to_string(tokens.cols()) + " but the header declares " +
                          std::to_string(header.stages) + " x " + std::to_string(header.frames));
  const int width = bits_per_index(header.codebook_size);

  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.reserve(kBitstreamHeaderBytes + payload_bytes(header));
  put_u32(out, kBitstreamVersion);
  for (std::uint32_t v : {header.sample_rate, header.frame_shift, header.frame_length, header.fft_size,
                          header.downsample, header.stages, header.codebook_size, header.code_dim,
                          header.frames})
    put_u32(out, v);

  std::uint32_t acc = 0;  // pending bits, right-aligned
  int pending = 0;
  for (Eigen::Index f = 0; f < tokens.cols(); ++f)
    for (Eigen::Index q = 0; q < tokens.rows(); ++q) {
      const std::int32_t m = tokens(q, f);
      if (m < 0 || std::uint32_t(m) >= header.codebook_size)
        throw ValidationError("token " + std::to_string(m) + " out of range for codebook size " +
                              std::to_string(header.codebook_size));
      for (int b = width - 1; b >= 0; --b) {
        acc = (acc << 1) | ((std::uint32_t(m) >> b) & 1u);
        if (++pending == 8) {
          out.push_back(std::uint8_t(acc));
          acc = 0;
          pending = 0;
        }
      }
    }
  if (pending > 0) out.push_back(std::uint8_t(acc << (8 - pending)));
  return out;
}

UnpackedStream unpack_tokens(std::span<const std::uint8_t> bytes) {
  using Kind = BitstreamError::Kind;
  if (bytes.size() < 4) throw BitstreamError(Kind::truncated, "stream shorter than its magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw BitstreamError(Kind::bad_magic, "not an APCS stream");
  if (bytes.size() < 8) throw BitstreamError(Kind::truncated, "stream truncated inside the header");
  const std::uint32_t version = get_u32(bytes.data() + 4);
  if (version != kBitstreamVersion)
    throw BitstreamError(Kind::bad_version, "unsupported stream version " + std::to_string(version));
  if (bytes.size() < kBitstreamHeaderBytes) throw BitstreamError(Kind::truncated, "stream truncated inside the header");

  UnpackedStream out;
  StreamHeader& h = out.header;
  std::uint32_t* fields[] = {&h.sample_rate, &h.frame_shift,   &h.frame_length, &h.fft_size, &h.downsample,
                             &h.stages,      &h.codebook_size, &h.code_dim,     &h.frames};
  for (std::size_t i = 0; i < 9; ++i) *fields[i] = get_u32(bytes.data() + 8 + 4 * i);
  validate(h);

  const std::size_t need = payload_bytes(h);
  const std::size_t have = bytes.size() - kBitstreamHeaderBytes;
  if (have < need)
    throw BitstreamError(Kind::truncated, "payload has " + std::to_string(have) + " bytes, header implies " +
                                              std::to_string(need));
  if (have > need) throw BitstreamError(Kind::invalid, "trailing bytes after the payload");

  const int width = bits_per_index(h.codebook_size);
  const std::uint8_t* payload = bytes.data() + kBitstreamHeaderBytes;
  out.tokens.resize(h.stages, h.frames);
  std::uint64_t bit = 0;
  for (std::uint32_t f = 0; f < h.frames; ++f)
    for (std::uint32_t q = 0; q < h.stages; ++q) {
      std::uint32_t m = 0;
      for (int b = 0; b < width; ++b, ++bit) m = (m << 1) | ((payload[bit >> 3] >> (7 - (bit & 7))) & 1u);
      if (m >= h.codebook_size)
        throw BitstreamError(Kind::invalid, "index " + std::to_string(m) + " exceeds the codebook size");
      out.tokens(q, f) = std::int32_t(m);
    }
  return out;
}

}  // namespace apcodec
