#include "palo/archive.hpp"

#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace palo::io {

namespace {

template <typename T>
void write_pod(std::string& out, T value) {
  out.append(reinterpret_cast<const char*>(&value), sizeof(T));
}

void write_string(std::string& out, const std::string& s) {
  write_pod<std::uint64_t>(out, s.size());
  out.append(s);
}

class Reader {
 public:
  explicit Reader(const std::string& data) : data_(data) {}

  template <typename T>
  T pod() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string string() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void bytes(char* out, std::size_t n) {
    need(n);
    if (n > 0) std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }

  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (n > data_.size() - pos_) throw FormatError("archive is truncated");
  }

  const std::string& data_;
  std::size_t pos_ = 0;
};

std::size_t element_size(DType t) {
  switch (t) {
    case DType::kF32: return 4;
    case DType::kF64:
    case DType::kI64:
    case DType::kU64: return 8;
  }
  throw FormatError("unknown tensor dtype");
}

}  // namespace

const Tensor* TensorArchive::find(const std::string& name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

void TensorArchive::insert(Tensor t) {
  for (auto& existing : tensors_) {
    if (existing.name == t.name) {
      existing = std::move(t);
      return;
    }
  }
  tensors_.push_back(std::move(t));
}

std::string TensorArchive::serialize() const {
  std::string out(kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(out, kVersion);
  write_string(out, kind_);
  write_string(out, digest_);
  write_string(out, meta_.dump());
  write_pod<std::uint64_t>(out, tensors_.size());
  for (const auto& t : tensors_) {
    write_string(out, t.name);
    write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) write_pod<std::int64_t>(out, d);
    write_pod<std::uint64_t>(out, t.bytes.size());
    out.append(t.bytes.data(), t.bytes.size());
  }
  return out;
}

TensorArchive TensorArchive::deserialize(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("not a PALo archive (bad magic)");
  }
  Reader r(bytes);
  char magic[sizeof(kMagic)];
  r.bytes(magic, sizeof(magic));
  const auto version = r.pod<std::uint32_t>();
  if (version != kVersion) throw FormatError("unsupported archive version " + std::to_string(version));
  TensorArchive a;
  a.kind_ = r.string();
  a.digest_ = r.string();
  try {
    a.meta_ = nlohmann::json::parse(r.string());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("archive metadata is not valid JSON: ") + e.what());
  }
  const auto count = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    Tensor t;
    t.name = r.string();
    t.dtype = static_cast<DType>(r.pod<std::uint8_t>());
    const auto ndim = r.pod<std::uint32_t>();
    std::int64_t elements = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      t.shape.push_back(r.pod<std::int64_t>());
      if (t.shape.back() < 0) throw FormatError("negative tensor dimension");
      elements *= t.shape.back();
    }
    const auto n = r.pod<std::uint64_t>();
    if (n != static_cast<std::uint64_t>(elements) * element_size(t.dtype)) {
      throw FormatError("tensor '" + t.name + "' size does not match its shape");
    }
    t.bytes.resize(n);
    r.bytes(t.bytes.data(), n);
    a.tensors_.push_back(std::move(t));
  }
  if (!r.done()) throw FormatError("trailing bytes after archive");
  return a;
}

void TensorArchive::save(const std::string& path) const {
  // Write-then-rename so a crash never leaves a half-written checkpoint.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot open '" + tmp + "' for writing");
    const std::string data = serialize();
    f.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!f) throw Error("failed writing '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw Error("cannot move '" + tmp + "' to '" + path + "'");
}

TensorArchive TensorArchive::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize(ss.str());
}

std::string fnv1a_hex(const std::string& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << h;
  return ss.str();
}

}  // namespace palo::io
