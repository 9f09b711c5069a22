#include "mdepth/ndtf.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace mdepth {

namespace io {

namespace {
template <typename U>
void write_le(std::ostream& os, U v) {
  char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(bytes, sizeof(U));
}

template <typename U>
U read_le(std::istream& is) {
  unsigned char bytes[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(U))) throw TensorError("unexpected end of stream");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
  return v;
}
}  // namespace

void write_u8(std::ostream& os, std::uint8_t v) { os.put(static_cast<char>(v)); }
void write_u32(std::ostream& os, std::uint32_t v) { write_le(os, v); }
void write_u64(std::ostream& os, std::uint64_t v) { write_le(os, v); }
void write_f32(std::ostream& os, float v) { write_le(os, std::bit_cast<std::uint32_t>(v)); }
void write_f64(std::ostream& os, double v) { write_le(os, std::bit_cast<std::uint64_t>(v)); }

std::uint8_t read_u8(std::istream& is) { return read_le<std::uint8_t>(is); }
std::uint32_t read_u32(std::istream& is) { return read_le<std::uint32_t>(is); }
std::uint64_t read_u64(std::istream& is) { return read_le<std::uint64_t>(is); }
float read_f32(std::istream& is) { return std::bit_cast<float>(read_le<std::uint32_t>(is)); }
double read_f64(std::istream& is) { return std::bit_cast<double>(read_le<std::uint64_t>(is)); }

void expect_magic(std::istream& is, const char (&magic)[5], const char* what) {
  char buf[4];
  if (!is.read(buf, 4)) throw TensorError(std::string(what) + ": truncated header");
  if (std::memcmp(buf, magic, 4) != 0) throw TensorError(std::string(what) + ": bad magic");
}

}  // namespace io

template <typename T>
void write_ndtf(std::ostream& os, const Tensor<T>& t) {
  os.write("NDTF", 4);
  io::write_u8(os, static_cast<std::uint8_t>(dtype_of<T>()));
  const auto& shape = t.shape();
  if (shape.size() > 255) throw TensorError("NDTF: rank too large");
  io::write_u8(os, static_cast<std::uint8_t>(shape.size()));
  for (auto e : shape) io::write_u32(os, static_cast<std::uint32_t>(e));
  for (T v : t.values()) {
    if constexpr (std::is_same_v<T, float>) io::write_f32(os, v);
    else io::write_f64(os, v);
  }
  if (!os) throw TensorError("NDTF: write failed");
}

template <typename T>
Tensor<T> read_ndtf(std::istream& is) {
  io::expect_magic(is, "NDTF", "NDTF");
  const auto code = io::read_u8(is);
  if (code != 1 && code != 2) throw TensorError("NDTF: unknown dtype code " + std::to_string(code));
  const auto rank = io::read_u8(is);
  Shape shape(rank);
  for (auto& e : shape) e = io::read_u32(is);
  std::vector<T> values(shape_numel(shape));
  for (auto& v : values) {
    v = code == 1 ? static_cast<T>(io::read_f32(is)) : static_cast<T>(io::read_f64(is));
  }
  return Tensor<T>::from_data(std::move(shape), std::move(values));
}

template <typename T>
void save_ndtf(const std::filesystem::path& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw TensorError("cannot open " + path.string() + " for writing");
  write_ndtf(os, t);
}

template <typename T>
Tensor<T> load_ndtf(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw TensorError("cannot open " + path.string());
  try {
    return read_ndtf<T>(is);
  } catch (const TensorError& e) {
    throw TensorError(path.string() + ": " + e.what());
  }
}

template void write_ndtf(std::ostream&, const Tensor<float>&);
template void write_ndtf(std::ostream&, const Tensor<double>&);
template Tensor<float> read_ndtf(std::istream&);
template Tensor<double> read_ndtf(std::istream&);
template void save_ndtf(const std::filesystem::path&, const Tensor<float>&);
template void save_ndtf(const std::filesystem::path&, const Tensor<double>&);
template Tensor<float> load_ndtf(const std::filesystem::path&);
template Tensor<double> load_ndtf(const std::filesystem::path&);

}  // namespace mdepth
