#pragma once

#include <filesystem>
#include <iosfwd>
#include <variant>

#include "dsr/tensor.hpp"

namespace dsr {

// Portable binary tensor file ("DSRT"):
//   magic "DSRT" | version u8 = 1 | dtype u8 (0 = f32, 1 = f64) | ndim u8 |
//   extents as u32 LE | raw LE data.
enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

using AnyTensor = std::variant<Tensor<float>, Tensor<double>>;

template <typename T>
void write_dsrt(std::ostream& out, const Tensor<T>& tensor);
template <typename T>
void write_dsrt(const std::filesystem::path& path, const Tensor<T>& tensor);

AnyTensor read_dsrt_any(std::istream& in);
AnyTensor read_dsrt_any(const std::filesystem::path& path);

// Reads and converts to T when the stored dtype differs.
template <typename T>
Tensor<T> read_dsrt(const std::filesystem::path& path);

}  // namespace dsr
