#pragma once

// NPY format version 1.0 for 1-D and 2-D little-endian float arrays.
//
// Layout: the magic "\x93NUMPY" with version bytes 1.0 and a uint16 LE header
// length. The header is an ASCII Python dict literal padded with spaces up to
// a 64-byte boundary and closed by '\n'. The raw C-order payload follows.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "repsim/error.hpp"
#include "repsim/tensor.hpp"

namespace repsim {

enum class NpyDtype { f32, f64 };

inline std::string_view to_string(NpyDtype d) { return d == NpyDtype::f32 ? "<f4" : "<f8"; }

struct NpyArray {
  Matrix values;  // always held as f64; `dtype` records what the file stored
  NpyDtype dtype = NpyDtype::f64;
  std::vector<std::size_t> shape;  // as written in the header, (n,) or (n, m)
};

namespace detail {

inline constexpr char npy_magic[] = "\x93NUMPY";
inline constexpr std::size_t npy_magic_len = 6;
inline constexpr std::size_t npy_preamble = npy_magic_len + 2 + 2;
inline constexpr std::size_t npy_align = 64;

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t b = 0; b < sizeof(U); ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}

template <typename U>
U get_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t b = 0; b < sizeof(U); ++b) v |= static_cast<U>(p[b]) << (8 * b);
  return v;
}

inline std::string shape_literal(const std::vector<std::size_t>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  if (shape.size() == 1) s += ",";
  return s + ")";
}

// Minimal reader for the dict literal numpy writes. Keys and string values
// may use either quote style.
class HeaderDict {
 public:
  explicit HeaderDict(std::string_view text) : text_(text) {}

  std::string_view value_of(const std::string& key) const {
    for (char q : {'\'', '"'}) {
      const std::string needle = std::string(1, q) + key + std::string(1, q);
      const auto at = text_.find(needle);
      if (at == std::string_view::npos) continue;
      auto pos = text_.find(':', at + needle.size());
      if (pos == std::string_view::npos) break;
      ++pos;
      while (pos < text_.size() && text_[pos] == ' ') ++pos;
      std::size_t end = pos;
      if (pos < text_.size() && text_[pos] == '(') {
        end = text_.find(')', pos);
        if (end == std::string_view::npos) throw ParseError(key, "unterminated tuple");
        return text_.substr(pos, end - pos + 1);
      }
      if (pos < text_.size() && (text_[pos] == '\'' || text_[pos] == '"')) {
        end = text_.find(text_[pos], pos + 1);
        if (end == std::string_view::npos) throw ParseError(key, "unterminated string");
        return text_.substr(pos + 1, end - pos - 1);
      }
      while (end < text_.size() && text_[end] != ',' && text_[end] != '}') ++end;
      auto v = text_.substr(pos, end - pos);
      while (!v.empty() && v.back() == ' ') v.remove_suffix(1);
      return v;
    }
    throw ParseError(key, "missing from header");
  }

 private:
  std::string_view text_;
};

inline std::vector<std::size_t> parse_shape(std::string_view tuple) {
  if (tuple.size() < 2 || tuple.front() != '(' || tuple.back() != ')') {
    throw ParseError("shape", "expected a tuple, got '" + std::string(tuple) + "'");
  }
  std::vector<std::size_t> dims;
  std::string_view body = tuple.substr(1, tuple.size() - 2);
  std::size_t pos = 0;
  while (pos < body.size()) {
    while (pos < body.size() && (body[pos] == ' ' || body[pos] == ',')) ++pos;
    if (pos >= body.size()) break;
    std::size_t end = pos;
    std::uint64_t v = 0;
    while (end < body.size() && body[end] >= '0' && body[end] <= '9') {
      if (v > (UINT64_MAX - 9) / 10) throw ParseError("shape", "dimension overflows");
      v = v * 10 + static_cast<std::uint64_t>(body[end] - '0');
      ++end;
    }
    if (end == pos) throw ParseError("shape", "non-integer dimension in '" + std::string(tuple) + "'");
    dims.push_back(static_cast<std::size_t>(v));
    pos = end;
  }
  if (dims.empty() || dims.size() > 2) {
    throw ParseError("shape", "only 1-D and 2-D arrays are supported, got " + std::string(tuple));
  }
  return dims;
}

}  // namespace detail

// Serializes `m` as (rows, cols). f32 output rounds each value to nearest.
inline std::string encode_npy(const Matrix& m, NpyDtype dtype,
                              std::vector<std::size_t> shape = {}) {
  if (shape.empty()) shape = {m.rows(), m.cols()};
  std::size_t count = 1;
  for (auto s : shape) count *= s;
  if (count != m.size() || shape.size() > 2) {
    fail(ErrorKind::dimension, "NPY shape " + detail::shape_literal(shape) +
                                   " does not describe a " + m.shape_string() + " matrix");
  }
  std::string header = "{'descr': '" + std::string(to_string(dtype)) +
                       "', 'fortran_order': False, 'shape': " + detail::shape_literal(shape) + ", }";
  const std::size_t unpadded = detail::npy_preamble + header.size() + 1;
  header.append((detail::npy_align - unpadded % detail::npy_align) % detail::npy_align, ' ');
  header.push_back('\n');
  if (header.size() > 0xFFFF) fail(ErrorKind::dimension, "NPY header too long for version 1.0");

  const std::size_t width = dtype == NpyDtype::f32 ? 4 : 8;
  std::string out;
  out.reserve(detail::npy_preamble + header.size() + width * m.size());
  out.append(detail::npy_magic, detail::npy_magic_len);
  out.push_back('\x01');
  out.push_back('\x00');
  detail::put_le(out, static_cast<std::uint16_t>(header.size()));
  out += header;
  for (double v : m.values()) {
    if (dtype == NpyDtype::f32) {
      detail::put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    } else {
      detail::put_le(out, std::bit_cast<std::uint64_t>(v));
    }
  }
  return out;
}

inline NpyArray decode_npy(std::string_view bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < detail::npy_magic_len ||
      std::memcmp(bytes.data(), detail::npy_magic, detail::npy_magic_len) != 0) {
    throw ParseError("magic", "not an NPY file");
  }
  if (bytes.size() < detail::npy_preamble) throw ParseError("version", "truncated preamble");
  if (p[6] != 1 || p[7] != 0) {
    throw ParseError("version", "unsupported NPY version " + std::to_string(p[6]) + "." +
                                    std::to_string(p[7]) + " (need 1.0)");
  }
  const std::size_t header_len = detail::get_le<std::uint16_t>(p + 8);
  if (bytes.size() < detail::npy_preamble + header_len) {
    throw ParseError("header", "truncated header");
  }
  const std::string_view header = bytes.substr(detail::npy_preamble, header_len);
  if (header.empty() || header.back() != '\n') throw ParseError("header", "missing terminating newline");
  const detail::HeaderDict dict(header);

  NpyArray out;
  const auto descr = dict.value_of("descr");
  if (descr == "<f8") {
    out.dtype = NpyDtype::f64;
  } else if (descr == "<f4") {
    out.dtype = NpyDtype::f32;
  } else {
    throw ParseError("descr", "unsupported dtype '" + std::string(descr) + "' (need <f4 or <f8)");
  }
  const auto order = dict.value_of("fortran_order");
  if (order == "True") throw ParseError("fortran_order", "Fortran-ordered arrays are not supported");
  if (order != "False") throw ParseError("fortran_order", "expected True or False");
  out.shape = detail::parse_shape(dict.value_of("shape"));

  const std::size_t rows = out.shape[0];
  const std::size_t cols = out.shape.size() == 2 ? out.shape[1] : 1;
  const std::size_t width = out.dtype == NpyDtype::f32 ? 4 : 8;
  const std::size_t payload = bytes.size() - detail::npy_preamble - header_len;
  if (cols != 0 && rows > payload / width / cols) {
    throw ParseError("payload", "truncated: header promises " + std::to_string(rows * cols) +
                                    " values, file holds " + std::to_string(payload / width));
  }
  if (payload != rows * cols * width) {
    throw ParseError("payload", "expected " + std::to_string(rows * cols * width) + " bytes, found " +
                                    std::to_string(payload));
  }
  std::vector<double> data(rows * cols);
  const unsigned char* q = p + detail::npy_preamble + header_len;
  for (std::size_t i = 0; i < data.size(); ++i, q += width) {
    data[i] = out.dtype == NpyDtype::f32
                  ? static_cast<double>(std::bit_cast<float>(detail::get_le<std::uint32_t>(q)))
                  : std::bit_cast<double>(detail::get_le<std::uint64_t>(q));
  }
  out.values = Matrix(rows, cols, std::move(data));
  return out;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorKind::io, "read failed for '" + path + "'");
  return bytes;
}

inline void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::io, "write failed for '" + path + "'");
}

inline NpyArray read_npy(const std::string& path) {
  try {
    return decode_npy(read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(e.field(), std::string(e.what()).substr(e.field().size() + 2) + " in '" + path + "'");
  }
}

inline void write_npy(const Matrix& m, NpyDtype dtype, const std::string& path) {
  write_file(path, encode_npy(m, dtype));
}

}  // namespace repsim
