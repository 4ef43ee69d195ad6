#include "mftrack/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "mftrack/errors.hpp"
#include "mftrack/losses.hpp"

namespace fs = std::filesystem;

namespace mft {

CropSpec crop_region(const BBox& box, double context_offset) {
    const double w = box.w(), h = box.h();
    if (w <= 0.0 || h <= 0.0) throw std::invalid_argument("crop_region: zero-area box");
    const double m = context_offset * (w + h) / 2.0;
    CropSpec spec;
    spec.side = std::sqrt((w + m) * (h + m));
    spec.cx = box.cx();
    spec.cy = box.cy();
    return spec;
}

BBox box_to_crop(const BBox& b, const CropSpec& spec, int64_t out_size) {
    const double scale = static_cast<double>(out_size) / spec.side;
    const double x0 = spec.cx - spec.side / 2.0, y0 = spec.cy - spec.side / 2.0;
    return {(b.x1 - x0) * scale, (b.y1 - y0) * scale, (b.x2 - x0) * scale,
            (b.y2 - y0) * scale};
}

BBox box_to_frame(const BBox& b, const CropSpec& spec, int64_t out_size) {
    const double scale = spec.side / static_cast<double>(out_size);
    const double x0 = spec.cx - spec.side / 2.0, y0 = spec.cy - spec.side / 2.0;
    return {b.x1 * scale + x0, b.y1 * scale + y0, b.x2 * scale + x0, b.y2 * scale + y0};
}

void apply_geometric_augment(CropSpec& spec, const AugmentParams& aug, Rng& rng) {
    const double u1 = rng.uniform(aug.scale_lo, aug.scale_hi);
    const double u2 = rng.uniform(aug.shift_lo, aug.shift_hi);
    const double u3 = rng.uniform(aug.shift_lo, aug.shift_hi);
    spec.side *= u1;
    spec.cx *= u2;
    spec.cy *= u3;
}

void apply_color_jitter(Tensor& img, const AugmentParams& aug, Rng& rng) {
    const int64_t h = img.dim(1), w = img.dim(2);
    const double gains[3] = {rng.uniform(aug.gain_lo, aug.gain_hi),
                             rng.uniform(aug.gain_lo, aug.gain_hi),
                             rng.uniform(aug.gain_lo, aug.gain_hi)};
    const double bright = rng.uniform(-aug.brightness, aug.brightness);
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t i = 0; i < h * w; ++i) {
            double& v = img[c * h * w + i];
            v = v * gains[c] + bright;
        }
}

SequenceRecord load_sequence(const std::string& dir) {
    SequenceRecord rec;
    rec.dir = dir;
    rec.name = fs::path(dir).filename().string();
    if (!fs::is_directory(dir)) throw DataError("not a sequence directory: " + dir);

    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".ppm")
            rec.frame_files.push_back(e.path().filename().string());
    std::sort(rec.frame_files.begin(), rec.frame_files.end());

    const std::string gt_path = dir + "/groundtruth.txt";
    std::ifstream gt(gt_path);
    if (!gt) throw DataError("missing groundtruth: " + gt_path);
    std::string line;
    while (std::getline(gt, line)) {
        if (line.empty()) continue;
        double x = 0, y = 0, w = 0, h = 0;
        if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf", &x, &y, &w, &h) != 4)
            throw DataError("malformed groundtruth line in " + gt_path + ": " + line);
        rec.boxes.push_back({x, y, x + w, y + h});
    }
    if (rec.boxes.size() != rec.frame_files.size())
        throw DataError("frame/groundtruth count mismatch in " + dir);
    if (rec.size() < 2) throw DataError("sequence too short: " + dir);
    return rec;
}

std::vector<SequenceRecord> load_dataset(const std::string& dir) {
    if (!fs::is_directory(dir)) throw DataError("not a dataset directory: " + dir);
    std::vector<std::string> subdirs;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) subdirs.push_back(e.path().string());
    std::sort(subdirs.begin(), subdirs.end());
    std::vector<SequenceRecord> out;
    out.reserve(subdirs.size());
    for (const auto& s : subdirs) {
        if (!fs::exists(s + "/groundtruth.txt")) {
            std::fprintf(stderr, "warning: skipping %s, no groundtruth.txt\n", s.c_str());
            continue;
        }
        out.push_back(load_sequence(s));
    }
    if (out.empty()) throw DataError("dataset has no usable sequences: " + dir);
    return out;
}

Tensor load_frame(const SequenceRecord& rec, int64_t idx) {
    if (idx < 0 || idx >= rec.size())
        throw std::invalid_argument("load_frame: index out of range");
    return read_ppm(rec.dir + "/" + rec.frame_files[static_cast<size_t>(idx)]);
}

TrainingTuple sample_training_tuple(const SequenceRecord& rec, int64_t delta,
                                    const AugmentParams& aug, Rng& rng,
                                    int64_t template_size, int64_t search_size,
                                    int64_t grid) {
    const int64_t n = rec.size();
    if (n < 2) throw DataError("sample_training_tuple: sequence too short");
    if (delta < 0) throw std::invalid_argument("sample_training_tuple: negative delta");

    TrainingTuple t;
    t.i = rng.uniform_int(0, n - 1);
    t.j = rng.uniform_int(t.i, std::min(t.i + delta, n - 1));
    t.k = rng.uniform_int(t.i, t.j);

    const Tensor frame_i = load_frame(rec, t.i);
    const Tensor frame_k = load_frame(rec, t.k);
    const Tensor frame_j = load_frame(rec, t.j);
    const BBox& box_i = rec.boxes[static_cast<size_t>(t.i)];
    const BBox& box_k = rec.boxes[static_cast<size_t>(t.k)];
    const BBox& box_j = rec.boxes[static_cast<size_t>(t.j)];

    const CropSpec spec_t = crop_region(box_i, aug.template_offset);
    t.tmpl = extract_crop(frame_i, spec_t.cx, spec_t.cy, spec_t.side, template_size);

    const CropSpec spec_s = crop_region(box_k, aug.search_offset);
    t.past = extract_crop(frame_k, spec_s.cx, spec_s.cy, spec_s.side, search_size);

    // the dynamic template is the pixel-exact center cut of the past search
    t.dyn = center_crop(t.past, template_size);

    CropSpec spec_c = crop_region(box_j, aug.search_offset);
    apply_geometric_augment(spec_c, aug, rng);
    t.cur = extract_crop(frame_j, spec_c.cx, spec_c.cy, spec_c.side, search_size);
    t.gt = clamp_box(box_to_crop(box_j, spec_c, search_size),
                     static_cast<double>(search_size), static_cast<double>(search_size));
    t.target = classification_target_map(t.gt, grid, static_cast<double>(search_size));

    apply_color_jitter(t.tmpl, aug, rng);
    apply_color_jitter(t.dyn, aug, rng);
    apply_color_jitter(t.past, aug, rng);
    apply_color_jitter(t.cur, aug, rng);
    return t;
}

SequenceRecord synth_generate_sequence(const SynthSpec& spec, const std::string& dir,
                                       Rng& rng) {
    if (spec.length < 2) throw std::invalid_argument("synth: length must be >= 2");
    fs::create_directories(dir);
    const int64_t W = spec.width, H = spec.height;

    // static background: per-channel base tone with two sinusoidal gratings
    double base[3], fx[3], fy[3], px[3], py[3];
    for (int c = 0; c < 3; ++c) {
        base[c] = rng.uniform(0.2, 0.45);
        fx[c] = rng.uniform(0.01, 0.04);
        fy[c] = rng.uniform(0.01, 0.04);
        px[c] = rng.uniform(0.0, 6.28);
        py[c] = rng.uniform(0.0, 6.28);
    }
    Tensor bg({3, H, W});
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x)
                bg[(c * H + y) * W + x] =
                    base[c] +
                    0.1 * std::sin(2.0 * M_PI * fx[c] * static_cast<double>(x) + px[c]) +
                    0.1 * std::sin(2.0 * M_PI * fy[c] * static_cast<double>(y) + py[c]);

    // object geometry, texture, and motion
    const double ow = rng.uniform(spec.min_obj, spec.max_obj);
    const double oh = rng.uniform(spec.min_obj, spec.max_obj);
    const int64_t wi = std::llround(ow), hi = std::llround(oh);
    double cx = rng.uniform(ow / 2.0 + 2.0, static_cast<double>(W) - ow / 2.0 - 2.0);
    double cy = rng.uniform(oh / 2.0 + 2.0, static_cast<double>(H) - oh / 2.0 - 2.0);
    double vx = rng.uniform(1.5, 3.5) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    double vy = rng.uniform(1.0, 2.5) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    double c1[3], c2[3];
    for (int c = 0; c < 3; ++c) {
        c1[c] = rng.uniform(0.6, 0.95);
        c2[c] = rng.uniform(0.0, 0.3);
    }
    const int64_t stripe = rng.uniform_int(5, 9);
    const bool ellipse = rng.uniform() < 0.5;

    std::ofstream gt(dir + "/groundtruth.txt");
    if (!gt) throw DataError("cannot write groundtruth in " + dir);

    for (int64_t t = 0; t < spec.length; ++t) {
        const int64_t x0 = std::llround(cx - ow / 2.0);
        const int64_t y0 = std::llround(cy - oh / 2.0);

        Tensor frame = bg;
        for (int64_t ly = 0; ly < hi; ++ly)
            for (int64_t lx = 0; lx < wi; ++lx) {
                if (ellipse) {
                    const double ex = (static_cast<double>(lx) + 0.5) / ow * 2.0 - 1.0;
                    const double ey = (static_cast<double>(ly) + 0.5) / oh * 2.0 - 1.0;
                    if (ex * ex + ey * ey > 1.0) continue;
                }
                const bool odd = ((lx + ly) / stripe) % 2 != 0;
                for (int64_t c = 0; c < 3; ++c)
                    frame[(c * H + y0 + ly) * W + x0 + lx] = odd ? c2[c] : c1[c];
            }
        apply_corruption(frame, spec.corruption, spec.severity, rng);

        char name[32];
        std::snprintf(name, sizeof(name), "%06lld.ppm", static_cast<long long>(t));
        write_ppm(dir + "/" + name, frame);
        gt << x0 << "," << y0 << "," << wi << "," << hi << "\n";

        cx += vx;
        cy += vy;
        const double margin = 2.0;
        if (cx - ow / 2.0 < margin) {
            cx = 2.0 * (margin + ow / 2.0) - cx;
            vx = -vx;
        }
        if (cx + ow / 2.0 > static_cast<double>(W) - margin) {
            cx = 2.0 * (static_cast<double>(W) - margin - ow / 2.0) - cx;
            vx = -vx;
        }
        if (cy - oh / 2.0 < margin) {
            cy = 2.0 * (margin + oh / 2.0) - cy;
            vy = -vy;
        }
        if (cy + oh / 2.0 > static_cast<double>(H) - margin) {
            cy = 2.0 * (static_cast<double>(H) - margin - oh / 2.0) - cy;
            vy = -vy;
        }
    }
    gt.close();
    return load_sequence(dir);
}

}  // namespace mft
