#include "fluencygan/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "fluencygan/errors.hpp"

namespace fluencygan {

namespace {

constexpr char kMagic[4] = {'F', 'L', 'G', 'N'};
constexpr const char* kConfigEnd = "end=FLGN";

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  template <typename U>
  void uint(U value) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
  }
  void f32(float value) { uint(std::bit_cast<std::uint32_t>(value)); }
  const std::vector<char>& buffer() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(std::vector<char> data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

  const char* take(std::size_t n, const char* what) {
    if (data_.size() - pos_ < n) {
      throw FormatError(path_ + ": truncated checkpoint while reading " + what);
    }
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }
  template <typename U>
  U uint(const char* what) {
    const auto* p = reinterpret_cast<const unsigned char*>(take(sizeof(U), what));
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(static_cast<U>(p[i]) << (8 * i));
    return value;
  }
  float f32(const char* what) { return std::bit_cast<float>(uint<std::uint32_t>(what)); }
  std::string line(const char* what) {
    std::string out;
    while (true) {
      const char c = *take(1, what);
      if (c == '\n') return out;
      out.push_back(c);
    }
  }
  std::size_t remaining() const { return data_.size() - pos_; }
  const std::string& path() const { return path_; }

 private:
  std::vector<char> data_;
  std::size_t pos_ = 0;
  std::string path_;
};

}  // namespace

const Tensor<float>& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw FormatError("checkpoint has no tensor '" + name + "'");
}

const std::string& Checkpoint::value(const std::string& key) const {
  for (const auto& [k, v] : config) {
    if (k == key) return v;
  }
  throw FormatError("checkpoint config lacks '" + key + "'");
}

bool Checkpoint::has_value(const std::string& key) const {
  for (const auto& [k, v] : config) {
    if (k == key) return true;
  }
  return false;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  Writer w;
  w.bytes(kMagic, 4);
  w.uint<std::uint32_t>(kCheckpointVersion);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(checkpoint.tensors.size()));
  for (const auto& [name, t] : checkpoint.tensors) {
    if (name.size() > 0xffff) throw ContractError("tensor name too long: " + name.substr(0, 32));
    w.uint<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.uint<std::uint8_t>(static_cast<std::uint8_t>(t.shape().size()));
    for (int d : t.shape()) w.uint<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (float v : t.values()) w.f32(v);
  }
  for (const auto& [k, v] : checkpoint.config) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw ContractError("checkpoint config entry '" + k + "' is not a single key=value line");
    }
    const auto line = k + "=" + v + "\n";
    w.bytes(line.data(), line.size());
  }
  const std::string end = std::string(kConfigEnd) + "\n";
  w.bytes(end.data(), end.size());
  for (auto word : checkpoint.rng) w.uint<std::uint64_t>(word);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path.string());
  Reader r(std::vector<char>(std::istreambuf_iterator<char>(in), {}), path.string());

  if (std::memcmp(r.take(4, "magic"), kMagic, 4) != 0) {
    throw FormatError(path.string() + ": not a checkpoint (bad magic)");
  }
  const auto version = r.uint<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  const auto count = r.uint<std::uint32_t>("entry count");
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto len = r.uint<std::uint16_t>("tensor name");
    std::string name(r.take(len, "tensor name"), len);
    const auto ndim = r.uint<std::uint8_t>("tensor rank");
    Shape shape;
    std::uint64_t total = 1;
    for (int d = 0; d < ndim; ++d) {
      const auto dim = r.uint<std::uint32_t>("tensor dims");
      if (dim == 0 || dim > (1u << 28)) {
        throw FormatError(path.string() + ": tensor '" + name + "' has invalid dimension");
      }
      shape.push_back(static_cast<int>(dim));
      total *= dim;
    }
    if (ndim == 0 || total * 4 > r.remaining()) {
      throw FormatError(path.string() + ": truncated checkpoint in tensor '" + name + "'");
    }
    Tensor<float> t(shape);
    for (auto& v : t.values()) v = r.f32("tensor values");
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  while (true) {
    auto line = r.line("config block");
    if (line == kConfigEnd) break;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw FormatError(path.string() + ": malformed config line '" + line + "'");
    }
    ck.config.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  for (auto& word : ck.rng) word = r.uint<std::uint64_t>("rng state");
  if (r.remaining() != 0) throw FormatError(path.string() + ": trailing bytes after checkpoint");
  return ck;
}

}  // namespace fluencygan
