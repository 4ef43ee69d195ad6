#include "mftrack/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include "mftrack/errors.hpp"

namespace mft {

std::vector<double> success_curve(const std::vector<double>& ious) {
    std::vector<double> curve(kCurvePoints, 0.0);
    if (ious.empty()) return curve;
    for (int t = 0; t < kCurvePoints; ++t) {
        const double tau = 0.05 * t;
        int64_t hits = 0;
        for (double v : ious)
            if (v + 1e-9 >= tau) ++hits;
        curve[static_cast<size_t>(t)] =
            static_cast<double>(hits) / static_cast<double>(ious.size());
    }
    return curve;
}

Metrics compute_metrics(const std::vector<BBox>& pred, const std::vector<BBox>& gt) {
    if (pred.size() != gt.size())
        throw std::invalid_argument("compute_metrics: length mismatch");
    if (pred.empty()) throw std::invalid_argument("compute_metrics: empty input");

    std::vector<double> ious(pred.size());
    int64_t prec_hits = 0, norm_hits = 0;
    double iou_sum = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        ious[i] = iou(pred[i], gt[i]);
        iou_sum += ious[i];
        const double dist = center_distance(pred[i], gt[i]);
        if (dist <= 20.0) ++prec_hits;
        const double scale = std::max(std::sqrt(gt[i].area()), 1e-12);
        if (dist / scale <= 0.2) ++norm_hits;
    }
    const auto n = static_cast<double>(pred.size());
    Metrics m;
    const std::vector<double> curve = success_curve(ious);
    for (double c : curve) m.auc += c;
    m.auc /= kCurvePoints;
    m.op50 = curve[10];
    m.op75 = curve[15];
    m.precision = static_cast<double>(prec_hits) / n;
    m.norm_precision = static_cast<double>(norm_hits) / n;
    m.mean_iou = iou_sum / n;
    return m;
}

OpeResult ope_run(TrackNet& net, const std::vector<SequenceRecord>& dataset,
                  const TrackerOptions& topt, const adapt::Config& adapt_cfg) {
    if (dataset.empty()) throw DataError("ope_run: empty dataset");
    net.set_adaptation(&adapt_cfg);

    OpeResult res;
    res.mean_curve.assign(kCurvePoints, 0.0);
    for (const auto& rec : dataset) {
        net.reset_adaptation();
        Tracker tracker(net, topt);

        SequenceResult sr;
        sr.name = rec.name;
        sr.boxes.reserve(static_cast<size_t>(rec.size()));
        sr.scores.reserve(static_cast<size_t>(rec.size()));
        sr.boxes.push_back(rec.boxes[0]);
        sr.scores.push_back(1.0);
        tracker.init(load_frame(rec, 0), rec.boxes[0]);
        for (int64_t t = 1; t < rec.size(); ++t) {
            const TrackResult r = tracker.track(load_frame(rec, t));
            sr.boxes.push_back(r.box);
            sr.scores.push_back(r.score);
        }
        sr.update_frames = tracker.update_frames();
        sr.metrics = compute_metrics(sr.boxes, rec.boxes);

        std::vector<double> ious(sr.boxes.size());
        for (size_t i = 0; i < sr.boxes.size(); ++i)
            ious[i] = iou(sr.boxes[i], rec.boxes[i]);
        const std::vector<double> curve = success_curve(ious);
        for (int i = 0; i < kCurvePoints; ++i)
            res.mean_curve[static_cast<size_t>(i)] += curve[static_cast<size_t>(i)];

        res.mean.auc += sr.metrics.auc;
        res.mean.op50 += sr.metrics.op50;
        res.mean.op75 += sr.metrics.op75;
        res.mean.precision += sr.metrics.precision;
        res.mean.norm_precision += sr.metrics.norm_precision;
        res.mean.mean_iou += sr.metrics.mean_iou;
        res.sequences.push_back(std::move(sr));
    }
    const auto n = static_cast<double>(res.sequences.size());
    res.mean.auc /= n;
    res.mean.op50 /= n;
    res.mean.op75 /= n;
    res.mean.precision /= n;
    res.mean.norm_precision /= n;
    res.mean.mean_iou /= n;
    for (double& c : res.mean_curve) c /= n;
    net.set_adaptation(nullptr);
    return res;
}

int64_t filter_macs(int64_t c2, int64_t squeeze, int64_t h, int64_t w, bool polarized) {
    const int64_t inner = c2 / squeeze;
    const int64_t hw = h * w;
    int64_t m = 0;
    m += inner * c2 * hw;                 // value map
    if (polarized) m += inner * c2 * hw;  // second value map
    m += c2 * hw;                         // channel-path query
    m += inner * c2 * hw;                 // spatial-path query
    m += inner * hw;                      // pooling against the spatial softmax
    m += c2 * inner;                      // expand back to channel width
    m += inner * hw;                      // contraction against the channel softmax
    return m;
}

int64_t tracking_step_macs(const ModelConfig& cfg) {
    const int64_t c = cfg.working_width;
    const int64_t g = 256 / Backbone::kStride;
    const int64_t gt = 128 / Backbone::kStride;
    int64_t m = 0;

    int64_t cin = 3, side = 256;
    for (int64_t width : cfg.widths) {
        side /= 2;
        m += width * side * side * cin * 9;
        cin = width;
    }
    m += c * side * side * cin;  // channel adapter

    m += filter_macs(2 * c, cfg.squeeze, g, g, false);
    m += c * (2 * c) * g * g;          // pair reduction
    m += (gt * gt) * c * g * g;        // pixel correlation
    m += cfg.head_width * g * g * (gt * gt + c);  // fusion

    const int64_t hd = cfg.head_width;
    const int64_t block = hd * g * g * 9 + hd * hd * g * g;
    m += 4 * block;            // one classification block, three box blocks
    m += 1 * g * g * hd;       // classification output
    m += 4 * g * g * hd;       // box output
    return m;
}

BenchResult bench_block(const std::string& block, const ModelConfig& cfg,
                        int64_t repeats, uint64_t seed) {
    if (repeats < 1) throw std::invalid_argument("bench_block: repeats must be >= 1");
    BenchResult res;
    res.block = block;
    res.repeats = repeats;

    const int64_t g = 256 / Backbone::kStride;
    std::vector<double> samples;
    samples.reserve(static_cast<size_t>(repeats));
    Rng rng(seed);
    ad::NoGradGuard ng;

    auto time_ms = [](auto&& fn) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        return std::chrono::duration<double, std::milli>(t1 - t0).count();
    };

    if (block == "fmf" || block == "psa") {
        const int64_t c2 = 2 * cfg.working_width;
        Tensor x({1, c2, g, g});
        for (int64_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform(-1.0, 1.0);
        const ad::Var xv = ad::constant(x);
        if (block == "fmf") {
            const MixedFilter f("bench.fmf", c2, cfg.squeeze, rng);
            res.params = f.param_count();
            res.macs = filter_macs(c2, cfg.squeeze, g, g, false);
            f.forward(xv);
            for (int64_t i = 0; i < repeats; ++i)
                samples.push_back(time_ms([&] { f.forward(xv); }));
        } else {
            const PolarizedFilter f("bench.psa", c2, cfg.squeeze, rng);
            res.params = f.param_count();
            res.macs = filter_macs(c2, cfg.squeeze, g, g, true);
            f.forward(xv);
            for (int64_t i = 0; i < repeats; ++i)
                samples.push_back(time_ms([&] { f.forward(xv); }));
        }
    } else if (block == "full") {
        TrackNet net(cfg, seed);
        res.params = net.param_count();
        res.macs = tracking_step_macs(cfg);

        Tensor tmpl({1, 3, 128, 128}), search({1, 3, 256, 256});
        for (int64_t i = 0; i < tmpl.numel(); ++i) tmpl[i] = rng.uniform();
        for (int64_t i = 0; i < search.numel(); ++i) search[i] = rng.uniform();
        const ad::Var f_tmpl = net.extract(ad::constant(tmpl), false);
        const ad::Var f_past = net.extract(ad::constant(search), false);
        const ad::Var f_dyn = net.extract(
            ad::constant(center_crop(search.reshaped({3, 256, 256}), 128)
                             .reshaped({1, 3, 128, 128})),
            false);
        const ad::Var cached = net.relation_block(f_dyn, f_tmpl, false);
        const ad::Var frame = ad::constant(search);
        auto step = [&] {
            const ad::Var f_t = net.extract(frame, false);
            const ad::Var omega_s = net.relation_block(f_t, f_past, false);
            net.predict(cached, omega_s, f_t, false);
        };
        step();
        for (int64_t i = 0; i < repeats; ++i) samples.push_back(time_ms(step));
    } else {
        throw std::invalid_argument("bench_block: unknown block: " + block);
    }

    std::sort(samples.begin(), samples.end());
    const size_t n = samples.size();
    res.median_ms = (samples[(n - 1) / 2] + samples[n / 2]) / 2.0;
    const auto p95 = static_cast<size_t>(
        std::min<int64_t>(static_cast<int64_t>(n) - 1,
                          static_cast<int64_t>(std::ceil(0.95 * static_cast<double>(n))) - 1));
    res.p95_ms = samples[std::max<size_t>(p95, 0)];
    return res;
}

}  // namespace mft
