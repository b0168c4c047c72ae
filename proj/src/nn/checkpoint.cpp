#include "apcodec/nn/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "apcodec/error.hpp"
#include "apcodec/nn/layers.hpp"

namespace apcodec::nn {

namespace {

constexpr char kMagic[4] = {'A', 'P', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  const char* take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint32_t u32(const char* what) {
    std::uint32_t v;
    std::memcpy(&v, take(4, what), 4);
    return v;
  }
  std::string str(const char* what) {
    const std::uint32_t n = u32(what);
    return std::string(take(n, what), n);
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const NamedTensor& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, std::uint32_t(ckpt.config.size()));
  out += ckpt.config;
  put_u32(out, std::uint32_t(ckpt.tensors.size()));
  for (const NamedTensor& t : ckpt.tensors) {
    put_u32(out, std::uint32_t(t.name.size()));
    out += t.name;
    put_u32(out, 2);
    put_u32(out, std::uint32_t(t.value.rows()));
    put_u32(out, std::uint32_t(t.value.cols()));
    for (Index r = 0; r < t.value.rows(); ++r)
      for (Index c = 0; c < t.value.cols(); ++c) {
        const float f = float(t.value(r, c));
        char b[4];
        std::memcpy(b, &f, 4);
        out.append(b, 4);
      }
  }
  return out;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  if (std::memcmp(in.take(4, "magic"), kMagic, 4) != 0) throw CheckpointError("not a checkpoint (bad magic)");
  const std::uint32_t version = in.u32("version");
  if (version != kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.config = in.str("config");
  const std::uint32_t count = in.u32("entry count");
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = in.str("tensor name");
    const std::uint32_t rank = in.u32("rank");
    if (rank > 2) throw CheckpointError("tensor " + t.name + " has unsupported rank " + std::to_string(rank));
    std::uint32_t dims[2] = {1, 1};
    for (std::uint32_t d = 0; d < rank; ++d) dims[d] = in.u32("dims");
    if (rank == 1) dims[1] = 1;
    const std::size_t n = std::size_t(dims[0]) * dims[1];
    const char* data = in.take(n * 4, "tensor data");
    t.value.resize(dims[0], dims[1]);
    for (std::size_t k = 0; k < n; ++k) {
      float f;
      std::memcpy(&f, data + 4 * k, 4);
      t.value(Index(k / dims[1]), Index(k % dims[1])) = f;
    }
    ckpt.tensors.push_back(std::move(t));
  }
  if (!in.done()) throw CheckpointError("trailing bytes after checkpoint entries");
  return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = serialize_checkpoint(ckpt);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp.string());
    f.write(bytes.data(), std::streamsize(bytes.size()));
    if (!f) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_checkpoint(ss.str());
}

void export_parameters(const ParameterStore& store, const std::string& prefix, Checkpoint& ckpt) {
  for (const auto& e : store.entries()) ckpt.tensors.push_back({prefix + e.name, e.var.value()});
}

void import_parameters(ParameterStore& store, const std::string& prefix, const Checkpoint& ckpt) {
  for (const auto& e : store.entries()) {
    const NamedTensor* t = ckpt.find(prefix + e.name);
    if (!t) throw CheckpointError("checkpoint is missing tensor " + prefix + e.name);
    Var v = e.var;
    if (t->value.rows() != v.rows() || t->value.cols() != v.cols())
      throw CheckpointError("shape mismatch for " + prefix + e.name);
    v.mutable_value() = t->value;
  }
}

}  // namespace apcodec::nn
