#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace rodeo {

enum class DType : std::uint8_t { f64 = 1, i64 = 2, u8 = 3, str = 4 };

struct NamedArray {
  DType dtype = DType::f64;
  std::vector<std::uint64_t> shape;
  std::vector<double> f64;
  std::vector<std::int64_t> i64;
  std::vector<std::uint8_t> u8;
  std::vector<std::string> str;

  std::uint64_t element_count() const;
};

/// Single-file table of named arrays followed by a text manifest.
///
/// Layout (all integers little-endian):
///   "RODEOARC"  u32 version  u32 array_count
///   per array:  u16 name_len, name, u8 dtype, u8 ndim, u64 shape[ndim],
///               u64 payload_bytes, payload
///               (str payload: per element u32 len + UTF-8 bytes)
///   u64 manifest_bytes, manifest text ("key=value\n" lines), "RODEOEND"
///
/// Multi-dimensional payloads are row-major (last index fastest).
class ArrayContainer {
 public:
  static constexpr std::uint32_t kVersion = 1;

  void put(const std::string& name, NamedArray array);

  /// Stores `m` as a row-major [rows, cols] array.
  void put_matrix(const std::string& name, const Eigen::MatrixXd& m);
  /// Stores the columns of `samples` as items: shape [cols, item_shape...].
  void put_samples(const std::string& name, const Eigen::MatrixXd& samples, std::vector<std::uint64_t> item_shape);
  void put_vector(const std::string& name, const Eigen::VectorXd& v);
  void put_ints(const std::string& name, const std::vector<std::int64_t>& values);
  void put_strings(const std::string& name, const std::vector<std::string>& values);

  bool has(const std::string& name) const;
  const NamedArray& at(const std::string& name) const;

  Eigen::MatrixXd get_matrix(const std::string& name) const;
  /// Inverse of put_samples: one column per leading-axis item.
  Eigen::MatrixXd get_samples(const std::string& name) const;
  Eigen::VectorXd get_vector(const std::string& name) const;
  std::vector<std::int64_t> get_ints(const std::string& name) const;
  std::vector<std::string> get_strings(const std::string& name) const;

  void set_meta(const std::string& key, const std::string& value);
  std::string meta(const std::string& key) const;
  std::string meta_or(const std::string& key, const std::string& fallback) const;
  bool has_meta(const std::string& key) const;
  const std::vector<std::pair<std::string, std::string>>& manifest() const { return manifest_; }

  std::vector<std::string> names() const;

  void save(const std::filesystem::path& path) const;
  static ArrayContainer load(const std::filesystem::path& path);

 private:
  std::map<std::string, NamedArray> arrays_;
  std::vector<std::string> order_;
  std::vector<std::pair<std::string, std::string>> manifest_;
};

}  // namespace rodeo
