#include "rodeo/container.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>

#include "rodeo/error.hpp"

namespace rodeo {

namespace {

constexpr char kMagic[8] = {'R', 'O', 'D', 'E', 'O', 'A', 'R', 'C'};
constexpr char kTrailer[8] = {'R', 'O', 'D', 'E', 'O', 'E', 'N', 'D'};

template <typename T>
void write_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& in, const std::string& what) {
  unsigned char bytes[sizeof(T)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(T));
  if (!in) fail(ErrorCode::parse, "truncated container while reading " + what);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

std::string read_bytes(std::istream& in, std::uint64_t n, const std::string& what) {
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) fail(ErrorCode::parse, "truncated container while reading " + what);
  return s;
}

std::uint64_t payload_size(const NamedArray& a) {
  switch (a.dtype) {
    case DType::f64: return a.f64.size() * 8;
    case DType::i64: return a.i64.size() * 8;
    case DType::u8: return a.u8.size();
    case DType::str: {
      std::uint64_t n = 0;
      for (const auto& s : a.str) n += 4 + s.size();
      return n;
    }
  }
  return 0;
}

std::size_t stored_count(const NamedArray& a) {
  switch (a.dtype) {
    case DType::f64: return a.f64.size();
    case DType::i64: return a.i64.size();
    case DType::u8: return a.u8.size();
    case DType::str: return a.str.size();
  }
  return 0;
}

}  // namespace

std::uint64_t NamedArray::element_count() const {
  return std::accumulate(shape.begin(), shape.end(), std::uint64_t{1}, std::multiplies<>());
}

void ArrayContainer::put(const std::string& name, NamedArray array) {
  require(!name.empty() && name.size() < 65536, ErrorCode::invalid_input, "bad array name");
  require(array.shape.size() < 256, ErrorCode::invalid_input, "too many dimensions for " + name);
  require(stored_count(array) == array.element_count(), ErrorCode::invalid_input,
          "shape does not match element count for array " + name);
  if (!arrays_.count(name)) order_.push_back(name);
  arrays_[name] = std::move(array);
}

void ArrayContainer::put_matrix(const std::string& name, const Eigen::MatrixXd& m) {
  NamedArray a;
  a.dtype = DType::f64;
  a.shape = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  a.f64.resize(m.size());
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(a.f64.data(), m.rows(), m.cols()) = m;
  put(name, std::move(a));
}

void ArrayContainer::put_samples(const std::string& name, const Eigen::MatrixXd& samples,
                                 std::vector<std::uint64_t> item_shape) {
  const std::uint64_t item = std::accumulate(item_shape.begin(), item_shape.end(), std::uint64_t{1}, std::multiplies<>());
  require(item == static_cast<std::uint64_t>(samples.rows()), ErrorCode::invalid_input,
          "item shape does not match sample length for " + name);
  NamedArray a;
  a.dtype = DType::f64;
  a.shape.push_back(static_cast<std::uint64_t>(samples.cols()));
  a.shape.insert(a.shape.end(), item_shape.begin(), item_shape.end());
  a.f64.assign(samples.data(), samples.data() + samples.size());
  put(name, std::move(a));
}

void ArrayContainer::put_vector(const std::string& name, const Eigen::VectorXd& v) {
  NamedArray a;
  a.dtype = DType::f64;
  a.shape = {static_cast<std::uint64_t>(v.size())};
  a.f64.assign(v.data(), v.data() + v.size());
  put(name, std::move(a));
}

void ArrayContainer::put_ints(const std::string& name, const std::vector<std::int64_t>& values) {
  NamedArray a;
  a.dtype = DType::i64;
  a.shape = {values.size()};
  a.i64 = values;
  put(name, std::move(a));
}

void ArrayContainer::put_strings(const std::string& name, const std::vector<std::string>& values) {
  NamedArray a;
  a.dtype = DType::str;
  a.shape = {values.size()};
  a.str = values;
  put(name, std::move(a));
}

bool ArrayContainer::has(const std::string& name) const { return arrays_.count(name) != 0; }

const NamedArray& ArrayContainer::at(const std::string& name) const {
  auto it = arrays_.find(name);
  if (it == arrays_.end()) fail(ErrorCode::lookup, "container has no array '" + name + "'");
  return it->second;
}

Eigen::MatrixXd ArrayContainer::get_matrix(const std::string& name) const {
  const auto& a = at(name);
  require(a.dtype == DType::f64 && a.shape.size() == 2, ErrorCode::invalid_input, name + " is not a 2-d f64 array");
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      a.f64.data(), static_cast<Eigen::Index>(a.shape[0]), static_cast<Eigen::Index>(a.shape[1]));
}

Eigen::MatrixXd ArrayContainer::get_samples(const std::string& name) const {
  const auto& a = at(name);
  require(a.dtype == DType::f64 && !a.shape.empty(), ErrorCode::invalid_input, name + " is not an f64 array");
  const auto n = static_cast<Eigen::Index>(a.shape[0]);
  const auto item = n == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(a.f64.size()) / n;
  return Eigen::Map<const Eigen::MatrixXd>(a.f64.data(), item, n);
}

Eigen::VectorXd ArrayContainer::get_vector(const std::string& name) const {
  const auto& a = at(name);
  require(a.dtype == DType::f64, ErrorCode::invalid_input, name + " is not an f64 array");
  return Eigen::Map<const Eigen::VectorXd>(a.f64.data(), static_cast<Eigen::Index>(a.f64.size()));
}

std::vector<std::int64_t> ArrayContainer::get_ints(const std::string& name) const {
  const auto& a = at(name);
  require(a.dtype == DType::i64, ErrorCode::invalid_input, name + " is not an i64 array");
  return a.i64;
}

std::vector<std::string> ArrayContainer::get_strings(const std::string& name) const {
  const auto& a = at(name);
  require(a.dtype == DType::str, ErrorCode::invalid_input, name + " is not a string array");
  return a.str;
}

void ArrayContainer::set_meta(const std::string& key, const std::string& value) {
  require(key.find_first_of("=\n") == std::string::npos && value.find('\n') == std::string::npos,
          ErrorCode::invalid_input, "manifest entries may not contain '=' in keys or newlines");
  for (auto& [k, v] : manifest_) {
    if (k == key) {
      v = value;
      return;
    }
  }
  manifest_.emplace_back(key, value);
}

bool ArrayContainer::has_meta(const std::string& key) const {
  return std::any_of(manifest_.begin(), manifest_.end(), [&](const auto& kv) { return kv.first == key; });
}

std::string ArrayContainer::meta(const std::string& key) const {
  for (const auto& [k, v] : manifest_) {
    if (k == key) return v;
  }
  fail(ErrorCode::lookup, "manifest has no key '" + key + "'");
}

std::string ArrayContainer::meta_or(const std::string& key, const std::string& fallback) const {
  return has_meta(key) ? meta(key) : fallback;
}

std::vector<std::string> ArrayContainer::names() const { return order_; }

void ArrayContainer::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write " + path.string());
  out.write(kMagic, 8);
  write_le<std::uint32_t>(out, kVersion);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(order_.size()));
  for (const auto& name : order_) {
    const auto& a = arrays_.at(name);
    write_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_le<std::uint8_t>(out, static_cast<std::uint8_t>(a.dtype));
    write_le<std::uint8_t>(out, static_cast<std::uint8_t>(a.shape.size()));
    for (auto s : a.shape) write_le<std::uint64_t>(out, s);
    write_le<std::uint64_t>(out, payload_size(a));
    switch (a.dtype) {
      case DType::f64:
        for (double v : a.f64) write_le<double>(out, v);
        break;
      case DType::i64:
        for (auto v : a.i64) write_le<std::int64_t>(out, v);
        break;
      case DType::u8:
        out.write(reinterpret_cast<const char*>(a.u8.data()), static_cast<std::streamsize>(a.u8.size()));
        break;
      case DType::str:
        for (const auto& s : a.str) {
          write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
          out.write(s.data(), static_cast<std::streamsize>(s.size()));
        }
        break;
    }
  }
  std::string text;
  for (const auto& [k, v] : manifest_) text += k + "=" + v + "\n";
  write_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(kTrailer, 8);
  if (!out) fail(ErrorCode::io, "write failed for " + path.string());
}

ArrayContainer ArrayContainer::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path.string());
  const std::string magic = read_bytes(in, 8, "magic");
  if (std::memcmp(magic.data(), kMagic, 8) != 0) fail(ErrorCode::parse, path.string() + " is not an array container");
  const auto version = read_le<std::uint32_t>(in, "version");
  if (version != kVersion) fail(ErrorCode::parse, "unsupported container version " + std::to_string(version));
  const auto count = read_le<std::uint32_t>(in, "array count");
  ArrayContainer c;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_le<std::uint16_t>(in, "name length");
    const std::string name = read_bytes(in, name_len, "array name");
    NamedArray a;
    const auto tag = read_le<std::uint8_t>(in, "dtype");
    if (tag < 1 || tag > 4) fail(ErrorCode::parse, "unknown dtype tag for " + name);
    a.dtype = static_cast<DType>(tag);
    const auto ndim = read_le<std::uint8_t>(in, "ndim");
    for (int d = 0; d < ndim; ++d) a.shape.push_back(read_le<std::uint64_t>(in, "shape"));
    const auto bytes = read_le<std::uint64_t>(in, "payload size");
    const auto n = a.element_count();
    switch (a.dtype) {
      case DType::f64:
        if (bytes != n * 8) fail(ErrorCode::parse, "payload size mismatch for " + name);
        a.f64.resize(n);
        for (auto& v : a.f64) v = read_le<double>(in, name);
        break;
      case DType::i64:
        if (bytes != n * 8) fail(ErrorCode::parse, "payload size mismatch for " + name);
        a.i64.resize(n);
        for (auto& v : a.i64) v = read_le<std::int64_t>(in, name);
        break;
      case DType::u8: {
        if (bytes != n) fail(ErrorCode::parse, "payload size mismatch for " + name);
        const std::string raw = read_bytes(in, n, name);
        a.u8.assign(raw.begin(), raw.end());
        break;
      }
      case DType::str: {
        std::uint64_t used = 0;
        a.str.resize(n);
        for (auto& s : a.str) {
          const auto len = read_le<std::uint32_t>(in, name);
          s = read_bytes(in, len, name);
          used += 4 + len;
        }
        if (used != bytes) fail(ErrorCode::parse, "payload size mismatch for " + name);
        break;
      }
    }
    c.put(name, std::move(a));
  }
  const auto manifest_len = read_le<std::uint64_t>(in, "manifest length");
  const std::string text = read_bytes(in, manifest_len, "manifest");
  const std::string trailer = read_bytes(in, 8, "trailer");
  if (std::memcmp(trailer.data(), kTrailer, 8) != 0) fail(ErrorCode::parse, "missing container trailer");
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(start, end - start);
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorCode::parse, "malformed manifest line: " + line);
    c.manifest_.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    start = end + 1;
  }
  return c;
}

}  // namespace rodeo
