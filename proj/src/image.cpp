#include "mftrack/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <vector>

#include "mftrack/errors.hpp"

namespace mft {

namespace {

// reads one whitespace-delimited token, skipping '#' comment lines
std::string next_token(std::istream& in) {
    std::string tok;
    for (;;) {
        const int c = in.get();
        if (c == EOF) break;
        if (c == '#') {
            std::string junk;
            std::getline(in, junk);
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    return tok;
}

}  // namespace

Tensor read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open image: " + path);
    if (next_token(f) != "P6") throw DataError("not a binary PPM: " + path);
    int64_t w = 0, h = 0, maxval = 0;
    try {
        w = std::stoll(next_token(f));
        h = std::stoll(next_token(f));
        maxval = std::stoll(next_token(f));
    } catch (const std::exception&) {
        throw DataError("malformed PPM header: " + path);
    }
    if (w <= 0 || h <= 0 || maxval != 255)
        throw DataError("unsupported PPM geometry: " + path);

    std::vector<uint8_t> raw(static_cast<size_t>(w * h * 3));
    f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (f.gcount() != static_cast<std::streamsize>(raw.size()))
        throw DataError("truncated PPM payload: " + path);

    Tensor img({3, h, w});
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c)
                img[(c * h + y) * w + x] =
                    raw[static_cast<size_t>((y * w + x) * 3 + c)] / 255.0;
    return img;
}

void write_ppm(const std::string& path, const Tensor& img) {
    if (img.rank() != 3 || img.dim(0) != 3)
        throw std::invalid_argument("write_ppm: expected (3,H,W)");
    const int64_t h = img.dim(1), w = img.dim(2);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write image: " + path);
    f << "P6\n" << w << " " << h << "\n255\n";
    std::vector<uint8_t> raw(static_cast<size_t>(w * h * 3));
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c) {
                const double v = std::round(img[(c * h + y) * w + x] * 255.0);
                raw[static_cast<size_t>((y * w + x) * 3 + c)] =
                    static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
            }
    f.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size()));
    if (!f) throw DataError("failed writing image payload: " + path);
}

Tensor extract_crop(const Tensor& frame, double cx, double cy, double side,
                    int64_t out_size) {
    if (frame.rank() != 3) throw std::invalid_argument("extract_crop: expected (C,H,W)");
    if (side <= 0.0 || out_size <= 0) throw std::invalid_argument("extract_crop: bad size");
    const int64_t ch = frame.dim(0), h = frame.dim(1), w = frame.dim(2);
    const double x0 = cx - side / 2.0, y0 = cy - side / 2.0;
    const double step = side / static_cast<double>(out_size);

    Tensor out({ch, out_size, out_size});
    auto tap = [&](int64_t c, int64_t y, int64_t x) -> double {
        if (y < 0 || y >= h || x < 0 || x >= w) return 0.0;
        return frame[(c * h + y) * w + x];
    };
    for (int64_t r = 0; r < out_size; ++r) {
        const double sy = y0 + (static_cast<double>(r) + 0.5) * step - 0.5;
        const int64_t yi = static_cast<int64_t>(std::floor(sy));
        const double fy = sy - static_cast<double>(yi);
        for (int64_t cidx = 0; cidx < out_size; ++cidx) {
            const double sx = x0 + (static_cast<double>(cidx) + 0.5) * step - 0.5;
            const int64_t xi = static_cast<int64_t>(std::floor(sx));
            const double fx = sx - static_cast<double>(xi);
            for (int64_t c = 0; c < ch; ++c) {
                const double v = (1.0 - fy) * ((1.0 - fx) * tap(c, yi, xi) +
                                               fx * tap(c, yi, xi + 1)) +
                                 fy * ((1.0 - fx) * tap(c, yi + 1, xi) +
                                       fx * tap(c, yi + 1, xi + 1));
                out[(c * out_size + r) * out_size + cidx] = v;
            }
        }
    }
    return out;
}

Tensor center_crop(const Tensor& img, int64_t out) {
    if (img.rank() != 3) throw std::invalid_argument("center_crop: expected (C,H,W)");
    const int64_t ch = img.dim(0), h = img.dim(1), w = img.dim(2);
    if (out <= 0 || h < out || w < out || (h - out) % 2 != 0 || (w - out) % 2 != 0)
        throw std::invalid_argument("center_crop: incompatible sizes");
    const int64_t oy = (h - out) / 2, ox = (w - out) / 2;
    Tensor res({ch, out, out});
    for (int64_t c = 0; c < ch; ++c)
        for (int64_t y = 0; y < out; ++y)
            for (int64_t x = 0; x < out; ++x)
                res[(c * out + y) * out + x] = img[(c * h + y + oy) * w + x + ox];
    return res;
}

Corruption corruption_from_string(const std::string& s) {
    if (s == "none") return Corruption::None;
    if (s == "brightness") return Corruption::Brightness;
    if (s == "blur") return Corruption::Blur;
    if (s == "noise") return Corruption::Noise;
    throw std::invalid_argument("unknown corruption: " + s);
}

std::string corruption_to_string(Corruption c) {
    switch (c) {
        case Corruption::None: return "none";
        case Corruption::Brightness: return "brightness";
        case Corruption::Blur: return "blur";
        case Corruption::Noise: return "noise";
    }
    return "none";
}

namespace {

void box_blur(Tensor& img, int64_t radius) {
    const int64_t ch = img.dim(0), h = img.dim(1), w = img.dim(2);
    Tensor tmp(img.shape());
    // horizontal pass with edge clamp
    for (int64_t c = 0; c < ch; ++c)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int64_t d = -radius; d <= radius; ++d) {
                    const int64_t xx = std::clamp(x + d, int64_t{0}, w - 1);
                    acc += img[(c * h + y) * w + xx];
                }
                tmp[(c * h + y) * w + x] = acc / static_cast<double>(2 * radius + 1);
            }
    for (int64_t c = 0; c < ch; ++c)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int64_t d = -radius; d <= radius; ++d) {
                    const int64_t yy = std::clamp(y + d, int64_t{0}, h - 1);
                    acc += tmp[(c * h + yy) * w + x];
                }
                img[(c * h + y) * w + x] = acc / static_cast<double>(2 * radius + 1);
            }
}

}  // namespace

void apply_corruption(Tensor& frame, Corruption mode, double severity, Rng& rng) {
    switch (mode) {
        case Corruption::None:
            return;
        case Corruption::Brightness:
            for (int64_t i = 0; i < frame.numel(); ++i) frame[i] += severity;
            return;
        case Corruption::Blur:
            box_blur(frame, std::max<int64_t>(1, std::llround(severity)));
            return;
        case Corruption::Noise:
            for (int64_t i = 0; i < frame.numel(); ++i)
                frame[i] += rng.normal(0.0, severity);
            return;
    }
}

}  // namespace mft
