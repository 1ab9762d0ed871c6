#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include <json.hpp>

#include "palo/errors.hpp"

namespace palo::io {

enum class DType : std::uint8_t { kF32 = 1, kF64 = 2, kI64 = 3, kU64 = 4 };

struct Tensor {
  std::string name;
  DType dtype = DType::kF64;
  std::vector<std::int64_t> shape;
  std::vector<char> bytes;
};

template <typename S>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::kF32; }
template <>
constexpr DType dtype_of<double>() { return DType::kF64; }
template <>
constexpr DType dtype_of<std::int64_t>() { return DType::kI64; }
template <>
constexpr DType dtype_of<std::uint64_t>() { return DType::kU64; }

// Versioned binary container: magic, format version, kind tag, config digest,
// a JSON metadata blob and named raw tensors. Values round-trip bit-exactly.
class TensorArchive {
 public:
  static constexpr char kMagic[8] = {'P', 'A', 'L', 'O', 'T', 'N', 'S', 'R'};
  static constexpr std::uint32_t kVersion = 1;

  TensorArchive() = default;
  TensorArchive(std::string kind, std::string digest) : kind_(std::move(kind)), digest_(std::move(digest)) {}

  const std::string& kind() const { return kind_; }
  const std::string& digest() const { return digest_; }
  nlohmann::json& meta() { return meta_; }
  const nlohmann::json& meta() const { return meta_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }

  bool has(const std::string& name) const { return find(name) != nullptr; }

  // Column-major matrix; a vector is stored with shape {n}.
  template <typename S>
  void put(const std::string& name, const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>& m) {
    put_raw<S>(name, {m.rows(), m.cols()}, m.data(), m.size());
  }
  template <typename S>
  void put(const std::string& name, const Eigen::Matrix<S, Eigen::Dynamic, 1>& v) {
    put_raw<S>(name, {v.size()}, v.data(), v.size());
  }
  template <typename S>
  void put(const std::string& name, const std::vector<S>& v) {
    put_raw<S>(name, {static_cast<std::int64_t>(v.size())}, v.data(), static_cast<std::int64_t>(v.size()));
  }

  template <typename S>
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> matrix(const std::string& name) const {
    const Tensor& t = checked<S>(name);
    if (t.shape.size() != 2) throw FormatError("tensor '" + name + "' is not a matrix");
    Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> m(t.shape[0], t.shape[1]);
    copy_out(t, m.data(), m.size());
    return m;
  }
  template <typename S>
  Eigen::Matrix<S, Eigen::Dynamic, 1> vector(const std::string& name) const {
    const Tensor& t = checked<S>(name);
    if (t.shape.size() != 1) throw FormatError("tensor '" + name + "' is not a vector");
    Eigen::Matrix<S, Eigen::Dynamic, 1> v(t.shape[0]);
    copy_out(t, v.data(), v.size());
    return v;
  }
  template <typename S>
  std::vector<S> list(const std::string& name) const {
    const Tensor& t = checked<S>(name);
    if (t.shape.size() != 1) throw FormatError("tensor '" + name + "' is not a vector");
    std::vector<S> v(static_cast<std::size_t>(t.shape[0]));
    copy_out(t, v.data(), static_cast<std::int64_t>(v.size()));
    return v;
  }

  std::string serialize() const;
  static TensorArchive deserialize(const std::string& bytes);
  void save(const std::string& path) const;
  static TensorArchive load(const std::string& path);

 private:
  template <typename S>
  void put_raw(const std::string& name, std::vector<std::int64_t> shape, const S* data, std::int64_t n) {
    Tensor t;
    t.name = name;
    t.dtype = dtype_of<S>();
    t.shape = std::move(shape);
    t.bytes.resize(static_cast<std::size_t>(n) * sizeof(S));
    if (n > 0) std::memcpy(t.bytes.data(), data, t.bytes.size());
    insert(std::move(t));
  }
  template <typename S>
  const Tensor& checked(const std::string& name) const {
    const Tensor* t = find(name);
    if (!t) throw FormatError("archive has no tensor '" + name + "'");
    if (t->dtype != dtype_of<S>()) throw FormatError("tensor '" + name + "' has a different dtype");
    return *t;
  }
  template <typename S>
  static void copy_out(const Tensor& t, S* out, std::int64_t n) {
    if (static_cast<std::size_t>(n) * sizeof(S) != t.bytes.size()) throw FormatError("tensor '" + t.name + "' is truncated");
    if (n > 0) std::memcpy(out, t.bytes.data(), t.bytes.size());
  }
  const Tensor* find(const std::string& name) const;
  void insert(Tensor t);

  std::string kind_;
  std::string digest_;
  nlohmann::json meta_ = nlohmann::json::object();
  std::vector<Tensor> tensors_;
};

// 64-bit FNV-1a, hex encoded.
std::string fnv1a_hex(const std::string& data);

}  // namespace palo::io
