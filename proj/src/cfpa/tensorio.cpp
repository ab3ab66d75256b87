#include "cfpa/tensorio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace cfpa {

namespace {

void put_u16(std::ostream& os, uint16_t v) {
    const uint8_t b[2] = {static_cast<uint8_t>(v & 0xFF), static_cast<uint8_t>(v >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& os, uint32_t v) {
    uint8_t b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<uint8_t>((v >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ostream& os, double v) {
    uint64_t u;
    std::memcpy(&u, &v, 8);
    uint8_t b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<uint8_t>((u >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(b), 8);
}

uint16_t get_u16(std::istream& is) {
    uint8_t b[2];
    is.read(reinterpret_cast<char*>(b), 2);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

uint32_t get_u32(std::istream& is) {
    uint8_t b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}

double get_f64(std::istream& is) {
    uint8_t b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
}

}  // namespace

size_t TensorContainer::count() const {
    size_t n = 1;
    for (uint32_t d : dims) n *= d;
    return dims.empty() ? 0 : n;
}

TensorContainer TensorContainer::from_image(const Image& img) {
    TensorContainer t;
    t.dtype = DType::F64;
    t.dims = {static_cast<uint32_t>(img.rows), static_cast<uint32_t>(img.cols)};
    t.f64 = img.data;
    return t;
}

TensorContainer TensorContainer::from_images(const std::vector<Image>& stack) {
    if (stack.empty()) throw std::invalid_argument("from_images: empty stack");
    TensorContainer t;
    t.dtype = DType::F64;
    t.dims = {static_cast<uint32_t>(stack.size()), static_cast<uint32_t>(stack[0].rows),
              static_cast<uint32_t>(stack[0].cols)};
    for (const auto& img : stack) {
        if (!img.same_shape(stack[0])) throw std::invalid_argument("from_images: ragged stack");
        t.f64.insert(t.f64.end(), img.data.begin(), img.data.end());
    }
    return t;
}

TensorContainer TensorContainer::from_mask(const Image& img) {
    TensorContainer t;
    t.dtype = DType::U8;
    t.dims = {static_cast<uint32_t>(img.rows), static_cast<uint32_t>(img.cols)};
    t.u8.resize(img.data.size());
    for (size_t i = 0; i < img.data.size(); ++i) {
        const double v = img.data[i];
        if (v != 0.0 && v != 1.0)
            throw std::invalid_argument("from_mask: mask entries must be 0 or 1");
        t.u8[i] = static_cast<uint8_t>(v);
    }
    return t;
}

Image TensorContainer::to_image() const {
    if (dims.size() != 2) throw std::invalid_argument("to_image: tensor is not 2-D");
    Image img(static_cast<int>(dims[0]), static_cast<int>(dims[1]));
    if (dtype == DType::F64) {
        img.data = f64;
    } else {
        for (size_t i = 0; i < u8.size(); ++i) img.data[i] = static_cast<double>(u8[i]);
    }
    return img;
}

std::vector<Image> TensorContainer::to_images() const {
    if (dims.size() != 3) throw std::invalid_argument("to_images: tensor is not 3-D");
    const size_t n = dims[0], plane = static_cast<size_t>(dims[1]) * dims[2];
    std::vector<Image> out;
    out.reserve(n);
    for (size_t k = 0; k < n; ++k) {
        Image img(static_cast<int>(dims[1]), static_cast<int>(dims[2]));
        for (size_t i = 0; i < plane; ++i)
            img.data[i] = (dtype == DType::F64) ? f64[k * plane + i]
                                                : static_cast<double>(u8[k * plane + i]);
        out.push_back(std::move(img));
    }
    return out;
}

void write_tensor(const std::string& path, const TensorContainer& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_tensor: cannot open " + path);
    os.write("CFPA", 4);
    put_u16(os, TensorContainer::kVersion);
    os.put(static_cast<char>(t.dtype));
    os.put(static_cast<char>(t.dims.size()));
    for (uint32_t d : t.dims) put_u32(os, d);
    if (t.dtype == TensorContainer::DType::F64) {
        if (t.f64.size() != t.count()) throw std::invalid_argument("write_tensor: payload size");
        for (double v : t.f64) put_f64(os, v);
    } else {
        if (t.u8.size() != t.count()) throw std::invalid_argument("write_tensor: payload size");
        os.write(reinterpret_cast<const char*>(t.u8.data()),
                 static_cast<std::streamsize>(t.u8.size()));
    }
    if (!os) throw std::runtime_error("write_tensor: write failed for " + path);
}

TensorContainer read_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_tensor: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "CFPA", 4) != 0)
        throw std::runtime_error("read_tensor: bad magic in " + path);
    const uint16_t version = get_u16(is);
    if (version != TensorContainer::kVersion)
        throw std::runtime_error("read_tensor: unsupported version " + std::to_string(version));
    TensorContainer t;
    const uint8_t dtype = static_cast<uint8_t>(is.get());
    if (dtype != 1 && dtype != 2)
        throw std::runtime_error("read_tensor: unknown dtype " + std::to_string(dtype));
    t.dtype = static_cast<TensorContainer::DType>(dtype);
    const int ndim = is.get();
    t.dims.resize(ndim);
    for (int i = 0; i < ndim; ++i) t.dims[i] = get_u32(is);
    const size_t n = t.count();
    if (t.dtype == TensorContainer::DType::F64) {
        t.f64.resize(n);
        for (size_t i = 0; i < n; ++i) t.f64[i] = get_f64(is);
    } else {
        t.u8.resize(n);
        is.read(reinterpret_cast<char*>(t.u8.data()), static_cast<std::streamsize>(n));
    }
    if (!is) throw std::runtime_error("read_tensor: truncated payload in " + path);
    return t;
}

void write_pgm16(const std::string& path, const Image& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_pgm16: cannot open " + path);
    os << "P5\n" << img.cols << " " << img.rows << "\n65535\n";
    for (double v : img.data) {
        const double clamped = std::min(1.0, std::max(0.0, v));
        const uint16_t q = static_cast<uint16_t>(std::lround(clamped * 65535.0));
        os.put(static_cast<char>(q >> 8));  // PGM samples are big-endian
        os.put(static_cast<char>(q & 0xFF));
    }
    if (!os) throw std::runtime_error("write_pgm16: write failed for " + path);
}

Image read_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_pgm: cannot open " + path);
    std::string magic;
    is >> magic;
    if (magic != "P5") throw std::runtime_error("read_pgm: only binary P5 supported: " + path);
    auto next_token = [&is]() {
        std::string tok;
        while (is >> tok) {
            if (tok[0] == '#') {
                std::string line;
                std::getline(is, line);
                continue;
            }
            return tok;
        }
        throw std::runtime_error("read_pgm: truncated header");
    };
    const int cols = std::stoi(next_token());
    const int rows = std::stoi(next_token());
    const int maxval = std::stoi(next_token());
    is.get();  // single whitespace after maxval
    if (rows < 1 || cols < 1 || maxval < 1 || maxval > 65535)
        throw std::runtime_error("read_pgm: bad header in " + path);
    Image img(rows, cols);
    const double scale = 1.0 / static_cast<double>(maxval);
    if (maxval < 256) {
        std::vector<uint8_t> buf(img.size());
        is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        for (size_t i = 0; i < buf.size(); ++i) img.data[i] = buf[i] * scale;
    } else {
        std::vector<uint8_t> buf(img.size() * 2);
        is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        for (size_t i = 0; i < img.size(); ++i)
            img.data[i] = ((buf[2 * i] << 8) | buf[2 * i + 1]) * scale;
    }
    if (!is) throw std::runtime_error("read_pgm: truncated payload in " + path);
    return img;
}

}  // namespace cfpa
