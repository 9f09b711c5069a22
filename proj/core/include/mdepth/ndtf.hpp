#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "mdepth/tensor.hpp"

namespace mdepth {

/// NDTF tensor blob: "NDTF", u8 dtype code, u8 rank, u32 extents, raw
/// little-endian payload.
enum class DType : std::uint8_t { Float32 = 1, Float64 = 2 };

template <typename T> constexpr DType dtype_of();
template <> constexpr DType dtype_of<float>() { return DType::Float32; }
template <> constexpr DType dtype_of<double>() { return DType::Float64; }

template <typename T>
void write_ndtf(std::ostream& os, const Tensor<T>& t);

/// Reads either dtype and converts to T. Throws on bad magic or truncation.
template <typename T>
Tensor<T> read_ndtf(std::istream& is);

template <typename T>
void save_ndtf(const std::filesystem::path& path, const Tensor<T>& t);
template <typename T>
Tensor<T> load_ndtf(const std::filesystem::path& path);

namespace io {
void write_u8(std::ostream& os, std::uint8_t v);
void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f32(std::ostream& os, float v);
void write_f64(std::ostream& os, double v);
std::uint8_t read_u8(std::istream& is);
std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
float read_f32(std::istream& is);
double read_f64(std::istream& is);
void expect_magic(std::istream& is, const char (&magic)[5], const char* what);
}  // namespace io

}  // namespace mdepth
