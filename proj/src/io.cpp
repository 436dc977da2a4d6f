#include "micle/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace micle {

static_assert(std::endian::native == std::endian::little,
              "RT1 writer assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'R', 'T', '1', '\0'};

template <typename T>
void append_raw(std::vector<std::uint8_t>& out, const T& v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
}

template <typename S>
std::vector<std::uint8_t> rt1_encode_impl(const Shape& shape, const std::vector<S>& data,
                                          Dtype dtype) {
    check_dim(numel(shape) == data.size(), "RT1 data does not match shape " + shape_str(shape));
    check_dim(shape.size() <= 255, "RT1 rank exceeds 255");
    std::vector<std::uint8_t> out;
    out.reserve(6 + 8 * shape.size() + sizeof(S) * data.size());
    out.insert(out.end(), kMagic, kMagic + 4);
    out.push_back(static_cast<std::uint8_t>(dtype));
    out.push_back(static_cast<std::uint8_t>(shape.size()));
    for (std::size_t e : shape) append_raw(out, static_cast<std::uint64_t>(e));
    const auto* p = reinterpret_cast<const std::uint8_t*>(data.data());
    out.insert(out.end(), p, p + sizeof(S) * data.size());
    return out;
}

}  // namespace

std::vector<std::uint8_t> rt1_encode(const Shape& shape, const std::vector<float>& data) {
    return rt1_encode_impl(shape, data, Dtype::f32);
}

std::vector<std::uint8_t> rt1_encode(const Shape& shape, const std::vector<double>& data) {
    return rt1_encode_impl(shape, data, Dtype::f64);
}

Rt1Blob rt1_decode(const std::uint8_t* bytes, std::size_t len) {
    if (len < 6 || std::memcmp(bytes, kMagic, 4) != 0) {
        throw ValidationError("not an RT1 blob (bad magic or truncated header)");
    }
    Rt1Blob blob;
    const std::uint8_t dcode = bytes[4];
    if (dcode > 1) throw ValidationError("RT1 unknown dtype code " + std::to_string(dcode));
    blob.dtype = static_cast<Dtype>(dcode);
    const std::size_t rank = bytes[5];
    std::size_t off = 6;
    if (len < off + 8 * rank) throw ValidationError("RT1 truncated extents");
    blob.shape.resize(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        std::uint64_t e;
        std::memcpy(&e, bytes + off, 8);
        off += 8;
        blob.shape[i] = static_cast<std::size_t>(e);
    }
    const std::size_t n = numel(blob.shape);
    const std::size_t esz = blob.dtype == Dtype::f32 ? 4 : 8;
    if (len != off + esz * n) {
        throw ValidationError("RT1 payload length mismatch: expected " +
                              std::to_string(off + esz * n) + " bytes, got " +
                              std::to_string(len));
    }
    if (blob.dtype == Dtype::f32) {
        blob.f32.resize(n);
        std::memcpy(blob.f32.data(), bytes + off, 4 * n);
    } else {
        blob.f64.resize(n);
        std::memcpy(blob.f64.data(), bytes + off, 8 * n);
    }
    return blob;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open file: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot open file for writing: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ValidationError("write failed: " + path);
}

void rt1_write(const std::string& path, const Shape& shape, const std::vector<float>& data) {
    write_file(path, rt1_encode(shape, data));
}

void rt1_write(const std::string& path, const Shape& shape, const std::vector<double>& data) {
    write_file(path, rt1_encode(shape, data));
}

Rt1Blob rt1_read(const std::string& path) {
    const auto bytes = read_file(path);
    return rt1_decode(bytes.data(), bytes.size());
}

namespace {

// Reads one PNM header token, skipping whitespace and # comments.
std::size_t pnm_token(const std::vector<std::uint8_t>& b, std::size_t& pos,
                      const std::string& path) {
    while (pos < b.size()) {
        if (std::isspace(b[pos])) {
            ++pos;
        } else if (b[pos] == '#') {
            while (pos < b.size() && b[pos] != '\n') ++pos;
        } else {
            break;
        }
    }
    if (pos >= b.size() || !std::isdigit(b[pos])) {
        throw ValidationError("corrupt PNM header in " + path);
    }
    std::size_t v = 0;
    while (pos < b.size() && std::isdigit(b[pos])) {
        v = v * 10 + (b[pos] - '0');
        ++pos;
    }
    return v;
}

Image decode_pnm(const std::vector<std::uint8_t>& bytes, std::size_t channels,
                 const std::string& path) {
    std::size_t pos = 2;
    const std::size_t w = pnm_token(bytes, pos, path);
    const std::size_t h = pnm_token(bytes, pos, path);
    const std::size_t maxval = pnm_token(bytes, pos, path);
    if (maxval != 255) {
        throw ValidationError("unsupported PNM maxval " + std::to_string(maxval) + " in " + path);
    }
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
        throw ValidationError("corrupt PNM header in " + path);
    }
    ++pos;  // single whitespace byte before raster
    const std::size_t need = w * h * channels;
    if (bytes.size() - pos < need) {
        throw ValidationError("truncated PNM raster in " + path);
    }
    Image img;
    img.channels = channels;
    img.height = h;
    img.width = w;
    img.data.resize(need);
    // Raster is interleaved by pixel; planes are c-major. Linear rescale
    // [0,255] -> [0,1].
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t c = 0; c < channels; ++c) {
                const std::uint8_t v = bytes[pos + (y * w + x) * channels + c];
                img.at(c, y, x) = static_cast<float>(v) / 255.0f;
            }
        }
    }
    return img;
}

}  // namespace

Image decode_image(const std::string& path) {
    const auto bytes = read_file(path);
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') {
        return decode_pnm(bytes, 3, path);
    }
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') {
        return decode_pnm(bytes, 1, path);
    }
    if (bytes.size() >= 4 && std::memcmp(bytes.data(), kMagic, 4) == 0) {
        Rt1Blob blob = rt1_decode(bytes.data(), bytes.size());
        if (blob.shape.size() != 3) {
            throw ValidationError("RT1 image must be rank 3 (CxHxW), got " +
                                  shape_str(blob.shape) + " in " + path);
        }
        Image img;
        img.channels = blob.shape[0];
        img.height = blob.shape[1];
        img.width = blob.shape[2];
        if (blob.dtype == Dtype::f32) {
            img.data = std::move(blob.f32);
        } else {
            img.data.assign(blob.f64.begin(), blob.f64.end());
        }
        for (float v : img.data) {
            if (!(v >= 0.0f && v <= 1.0f)) {
                throw ValidationError("RT1 image values outside [0,1] in " + path);
            }
        }
        return img;
    }
    throw ValidationError("unsupported image format: " + path);
}

namespace {

std::uint8_t quantize(float v) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

void write_pnm(const std::string& path, const Image& img, const char* tag,
               std::size_t channels) {
    check_dim(img.channels == channels,
              std::string(tag) + " requires " + std::to_string(channels) + " channels, image has " +
                  std::to_string(img.channels));
    std::vector<std::uint8_t> out;
    const std::string header = std::string(tag) + "\n" + std::to_string(img.width) + " " +
                               std::to_string(img.height) + "\n255\n";
    out.insert(out.end(), header.begin(), header.end());
    out.reserve(out.size() + img.width * img.height * channels);
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x) {
            for (std::size_t c = 0; c < channels; ++c) {
                out.push_back(quantize(img.at(c, y, x)));
            }
        }
    }
    write_file(path, out);
}

}  // namespace

void write_ppm(const std::string& path, const Image& img) { write_pnm(path, img, "P6", 3); }
void write_pgm(const std::string& path, const Image& img) { write_pnm(path, img, "P5", 1); }

}  // namespace micle
