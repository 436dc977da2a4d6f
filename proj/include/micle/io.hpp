#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "micle/common.hpp"
#include "micle/tensor.hpp"

namespace micle {

// Raw tensor container RT1: magic "RT1\0", u8 dtype (0 = float32,
// 1 = float64), u8 rank, little-endian u64 extents, then raw little-endian
// values.
enum class Dtype : std::uint8_t { f32 = 0, f64 = 1 };

struct Rt1Blob {
    Dtype dtype;
    Shape shape;
    std::vector<float> f32;   // populated when dtype == f32
    std::vector<double> f64;  // populated when dtype == f64
};

std::vector<std::uint8_t> rt1_encode(const Shape& shape, const std::vector<float>& data);
std::vector<std::uint8_t> rt1_encode(const Shape& shape, const std::vector<double>& data);
Rt1Blob rt1_decode(const std::uint8_t* bytes, std::size_t len);

void rt1_write(const std::string& path, const Shape& shape, const std::vector<float>& data);
void rt1_write(const std::string& path, const Shape& shape, const std::vector<double>& data);
Rt1Blob rt1_read(const std::string& path);

// Image planes are C x H x W, values in [0,1]. PPM (P6) carries 3 channels,
// PGM (P5) one; 8-bit maxval only. decode_image dispatches on magic bytes and
// also accepts an RT1 float tensor of rank 3 with values already in [0,1].
struct Image {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> data;  // c-major, [0,1]

    float at(std::size_t c, std::size_t y, std::size_t x) const {
        return data[(c * height + y) * width + x];
    }
    float& at(std::size_t c, std::size_t y, std::size_t x) {
        return data[(c * height + y) * width + x];
    }
};

Image decode_image(const std::string& path);
void write_ppm(const std::string& path, const Image& img);  // 3 channels
void write_pgm(const std::string& path, const Image& img);  // 1 channel

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace micle
