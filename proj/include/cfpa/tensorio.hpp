#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cfpa/image.hpp"

namespace cfpa {

// Binary tensor container. Byte layout (little-endian):
//   magic   4 bytes  "CFPA"
//   version u16      currently 1
//   dtype   u8       1 = f64, 2 = u8
//   ndim    u8
//   dims    u32 x ndim, row-major
//   payload product(dims) * dtype size bytes, contiguous
struct TensorContainer {
    static constexpr uint16_t kVersion = 1;
    enum class DType : uint8_t { F64 = 1, U8 = 2 };

    DType dtype = DType::F64;
    std::vector<uint32_t> dims;
    std::vector<double> f64;  // valid when dtype == F64
    std::vector<uint8_t> u8;  // valid when dtype == U8

    size_t count() const;

    static TensorContainer from_image(const Image& img);
    static TensorContainer from_images(const std::vector<Image>& stack);  // dims (n, rows, cols)
    static TensorContainer from_mask(const Image& img);                   // u8 payload
    Image to_image() const;
    std::vector<Image> to_images() const;
};

void write_tensor(const std::string& path, const TensorContainer& t);
TensorContainer read_tensor(const std::string& path);

// 16-bit PGM (P5, maxval 65535, big-endian samples) for human-viewable dumps.
// Values are clamped to [0,1] before quantization.
void write_pgm16(const std::string& path, const Image& img);
Image read_pgm(const std::string& path);  // accepts 8- and 16-bit P5

}  // namespace cfpa
