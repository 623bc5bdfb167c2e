#include "dsr/tensor_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace dsr {
namespace {

constexpr std::array<char, 4> kMagic{'D', 'S', 'R', 'T'};
constexpr std::uint8_t kVersion = 1;

template <typename U>
void put_le(std::ostream& out, U value) {
    std::array<unsigned char, sizeof(U)> bytes{};
    std::memcpy(bytes.data(), &value, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    out.write(reinterpret_cast<const char*>(bytes.data()), sizeof(U));
}

template <typename U>
U get_le(std::istream& in) {
    std::array<unsigned char, sizeof(U)> bytes{};
    in.read(reinterpret_cast<char*>(bytes.data()), sizeof(U));
    if (!in) throw IoError("truncated DSRT stream");
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    U value;
    std::memcpy(&value, bytes.data(), sizeof(U));
    return value;
}

template <typename T>
Tensor<T> read_payload(std::istream& in, Shape shape) {
    std::vector<T> data(numel(shape));
    if constexpr (std::endian::native == std::endian::little) {
        in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(T)));
        if (!in) throw IoError("truncated DSRT payload");
    } else {
        for (auto& v : data) v = get_le<T>(in);
    }
    return Tensor<T>(std::move(shape), std::move(data));
}

}  // namespace

template <typename T>
void write_dsrt(std::ostream& out, const Tensor<T>& tensor) {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    if (tensor.rank() > std::numeric_limits<std::uint8_t>::max()) throw DimensionError("rank too large for DSRT");
    out.write(kMagic.data(), kMagic.size());
    put_le<std::uint8_t>(out, kVersion);
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(std::is_same_v<T, float> ? DType::f32 : DType::f64));
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(tensor.rank()));
    for (std::size_t e : tensor.shape()) {
        if (e > std::numeric_limits<std::uint32_t>::max()) throw DimensionError("extent exceeds u32");
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e));
    }
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(tensor.ptr()),
                  static_cast<std::streamsize>(tensor.size() * sizeof(T)));
    } else {
        for (T v : tensor.data()) put_le<T>(out, v);
    }
    if (!out) throw IoError("failed writing DSRT stream");
}

template <typename T>
void write_dsrt(const std::filesystem::path& path, const Tensor<T>& tensor) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    write_dsrt(out, tensor);
}

AnyTensor read_dsrt_any(std::istream& in) {
    std::array<char, 4> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kMagic) throw IoError("not a DSRT stream (bad magic)");
    const auto version = get_le<std::uint8_t>(in);
    if (version != kVersion) throw IoError("unsupported DSRT version " + std::to_string(version));
    const auto dtype = get_le<std::uint8_t>(in);
    const auto ndim = get_le<std::uint8_t>(in);
    Shape shape(ndim);
    for (auto& e : shape) e = get_le<std::uint32_t>(in);
    switch (static_cast<DType>(dtype)) {
        case DType::f32: return read_payload<float>(in, std::move(shape));
        case DType::f64: return read_payload<double>(in, std::move(shape));
    }
    throw IoError("unknown DSRT dtype " + std::to_string(dtype));
}

AnyTensor read_dsrt_any(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifactError(path.string());
    return read_dsrt_any(in);
}

template <typename T>
Tensor<T> read_dsrt(const std::filesystem::path& path) {
    return std::visit(
        [](auto&& t) -> Tensor<T> {
            using Stored = typename std::decay_t<decltype(t)>::value_type;
            if constexpr (std::is_same_v<Stored, T>) {
                return std::move(t);
            } else {
                return t.template cast<T>();
            }
        },
        read_dsrt_any(path));
}

template void write_dsrt<float>(std::ostream&, const Tensor<float>&);
template void write_dsrt<double>(std::ostream&, const Tensor<double>&);
template void write_dsrt<float>(const std::filesystem::path&, const Tensor<float>&);
template void write_dsrt<double>(const std::filesystem::path&, const Tensor<double>&);
template Tensor<float> read_dsrt<float>(const std::filesystem::path&);
template Tensor<double> read_dsrt<double>(const std::filesystem::path&);

}  // namespace dsr
