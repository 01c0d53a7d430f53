#include "ccaps/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace ccaps {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  template <typename T>
  void put(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  std::string& bytes() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in, std::size_t end) : in_(in), end_(end) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void get_doubles(double* dst, std::size_t n) {
    need(n * sizeof(double));
    std::memcpy(dst, in_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw ParseError("checkpoint truncated", 0);
  }
  const std::string& in_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const char* data, std::size_t n) {
  return static_cast<std::uint32_t>(
      ::crc32(::crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

}  // namespace

const TensorRecord* CheckpointData::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

std::string encode_checkpoint(const CheckpointData& data) {
  Writer w;
  w.bytes().append("CCAP", 4);
  w.put(CheckpointData::kVersion);
  w.put(static_cast<std::uint32_t>(data.meta.size()));
  for (const auto& [k, v] : data.meta) {
    w.put_string(k);
    w.put_string(v);
  }
  w.put(static_cast<std::uint64_t>(data.tensors.size()));
  for (const auto& t : data.tensors) {
    if (t.data.size() != ad::numel(t.shape)) {
      throw DimensionError("checkpoint tensor '" + t.name + "' has inconsistent shape");
    }
    w.put_string(t.name);
    w.put(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.put(static_cast<std::uint64_t>(d));
    for (double x : t.data) w.put(x);
  }
  const auto crc = crc_of(w.bytes().data(), w.bytes().size());
  w.put(crc);
  return std::move(w.bytes());
}

CheckpointData decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 12 || bytes.compare(0, 4, "CCAP") != 0) throw ParseError("not a CCAP checkpoint", 0);
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + body, 4);
  if (crc_of(bytes.data(), body) != stored_crc) throw ParseError("checkpoint CRC32 mismatch", 0);

  Reader r(bytes, body);
  r.get<std::uint32_t>();  // magic, already checked
  const auto version = r.get<std::uint32_t>();
  if (version != CheckpointData::kVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version), 0);
  }
  CheckpointData out;
  const auto n_meta = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto k = r.get_string();
    out.meta[k] = r.get_string();
  }
  const auto n_tensors = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n_tensors; ++i) {
    TensorRecord t;
    t.name = r.get_string();
    const auto rank = r.get<std::uint32_t>();
    for (std::uint32_t d = 0; d < rank; ++d) t.shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
    t.data.resize(ad::numel(t.shape));
    r.get_doubles(t.data.data(), t.data.size());
    out.tensors.push_back(std::move(t));
  }
  if (r.pos() != body) throw ParseError("trailing bytes in checkpoint", 0);
  return out;
}

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
  const auto bytes = encode_checkpoint(data);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing '" + path.string() + "'");
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace ccaps
