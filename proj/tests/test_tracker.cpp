#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "mftrack/image.hpp"
#include "mftrack/sampling.hpp"
#include "mftrack/tracker.hpp"
#include "test_util.hpp"

using namespace mft;

namespace {

ModelConfig tiny_model() {
    ModelConfig cfg;
    cfg.widths = {4, 6, 8, 10};
    cfg.working_width = 12;
    cfg.head_width = 8;
    cfg.squeeze = 2;
    return cfg;
}

// Smooth gradient background plus a bright square centered at (cx, cy) and a
// little seeded noise, so consecutive frames differ in a controlled way.
Tensor make_frame(int64_t width, int64_t height, double cx, double cy, Rng& rng) {
    Tensor f({3, height, width});
    const double vals[3] = {0.9, 0.7, 0.5};
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < height; ++y)
            for (int64_t x = 0; x < width; ++x) {
                double v = 0.1 + 0.2 * static_cast<double>(x) / static_cast<double>(width) +
                           0.1 * static_cast<double>(y) / static_cast<double>(height) +
                           rng.uniform(0.0, 0.02);
                if (std::abs(static_cast<double>(x) - cx) <= 12.0 &&
                    std::abs(static_cast<double>(y) - cy) <= 12.0)
                    v = vals[c];
                f.at3(c, y, x) = v;
            }
    return f;
}

ad::Var feat(TrackNet& net, const Tensor& img) {
    return net.extract(ad::constant(img.reshaped({1, img.dim(0), img.dim(1), img.dim(2)})),
                       false);
}

BBox replic_sane(const BBox& raw, double width, double height) {
    BBox b = clamp_box(raw, width, height);
    if (b.w() < 2.0) {
        const double c = std::clamp(b.cx(), 1.0, width - 1.0);
        b.x1 = c - 1.0;
        b.x2 = c + 1.0;
    }
    if (b.h() < 2.0) {
        const double c = std::clamp(b.cy(), 1.0, height - 1.0);
        b.y1 = c - 1.0;
        b.y2 = c + 1.0;
    }
    return b;
}

}  // namespace

TEST_CASE("update gate matches the pinned two-step example") {
    ScoreUpdateGate gate(UpdatePolicy{});
    CHECK(gate.average() == 1.0);
    CHECK_FALSE(gate.step(0.8));
    CHECK(std::abs(gate.average() - 0.95) <= 1e-12);
    CHECK_FALSE(gate.step(0.8));
    CHECK(std::abs(gate.average() - 0.9125) <= 1e-12);
    CHECK(gate.counter() == 2);
}

TEST_CASE("gate with interval one fires on the first score above average") {
    ScoreUpdateGate gate(UpdatePolicy{1, 0.25});
    CHECK_FALSE(gate.step(0.5));
    CHECK(std::abs(gate.average() - 0.875) <= 1e-12);
    CHECK(gate.step(0.9));
    CHECK(gate.counter() == 0);
    CHECK(std::abs(gate.average() - (0.75 * 0.875 + 0.25 * 0.9)) <= 1e-12);
}

TEST_CASE("constant sub-unit stream never triggers an update") {
    ScoreUpdateGate eager(UpdatePolicy{1, 0.25});
    ScoreUpdateGate patient(UpdatePolicy{60, 0.25});
    for (int t = 0; t < 500; ++t) {
        CHECK_FALSE(eager.step(0.9));
        CHECK_FALSE(patient.step(0.99));
    }
    CHECK(eager.average() >= 0.9);
    CHECK(patient.average() >= 0.99);
}

TEST_CASE("gate enforces the minimum interval between updates") {
    ScoreUpdateGate gate(UpdatePolicy{60, 0.25});
    std::vector<int> fired;
    for (int t = 1; t <= 300; ++t)
        if (gate.step(2.0)) fired.push_back(t);
    CHECK(fired == std::vector<int>{60, 120, 180, 240, 300});
}

TEST_CASE("gate replays a scripted stream against a scalar oracle") {
    const UpdatePolicy policy{20, 0.25};
    ScoreUpdateGate gate(policy);
    double avg = 1.0;
    int64_t counter = 0;
    for (int t = 0; t < 300; ++t) {
        const double s = 0.55 + 0.4 * std::sin(0.07 * t) + 0.05 * std::cos(1.3 * t);
        counter += 1;
        const bool want = counter >= policy.n && s > avg;
        if (want) counter = 0;
        avg = (1.0 - policy.lambda_d) * avg + policy.lambda_d * s;
        CHECK(gate.step(s) == want);
        CHECK(std::abs(gate.average() - avg) <= 1e-12);
        CHECK(gate.counter() == counter);
    }
}

TEST_CASE("gate reset restores the initial state") {
    ScoreUpdateGate gate(UpdatePolicy{1, 0.25});
    gate.step(0.3);
    gate.step(0.4);
    gate.reset();
    CHECK(gate.counter() == 0);
    CHECK(gate.average() == 1.0);
}

TEST_CASE("tracker rejects misuse") {
    TrackNet net(tiny_model(), 7);
    Rng rng(3);
    const Tensor frame = make_frame(160, 120, 80.0, 60.0, rng);

    Tracker fresh(net, TrackerOptions{});
    CHECK_THROWS_AS(fresh.track(frame), std::runtime_error);

    Tracker t(net, TrackerOptions{});
    CHECK_THROWS_AS(t.init(frame, BBox{10, 10, 10, 40}), std::invalid_argument);
    CHECK_THROWS_AS(t.init(Tensor({3, 120}), BBox{10, 10, 40, 40}), std::invalid_argument);

    TrackerOptions bad;
    bad.search_size = 250;
    CHECK_THROWS_AS(Tracker(net, bad), std::invalid_argument);
}

TEST_CASE("tracking runs deterministically and boxes stay inside the frame") {
    const int64_t width = 192, height = 144;
    std::vector<Tensor> frames;
    Rng frng(11);
    for (int t = 0; t < 25; ++t)
        frames.push_back(make_frame(width, height, 60.0 + 2.5 * t, 70.0 - 1.0 * t, frng));
    const BBox init{48, 58, 72, 82};

    TrackNet net_a(tiny_model(), 5);
    TrackNet net_b(tiny_model(), 5);
    Tracker a(net_a, TrackerOptions{});
    Tracker b(net_b, TrackerOptions{});
    a.init(frames[0], init);
    b.init(frames[0], init);
    for (size_t t = 1; t < frames.size(); ++t) {
        const TrackResult ra = a.track(frames[t]);
        const TrackResult rb = b.track(frames[t]);
        CHECK(ra.box.x1 == rb.box.x1);
        CHECK(ra.box.y1 == rb.box.y1);
        CHECK(ra.box.x2 == rb.box.x2);
        CHECK(ra.box.y2 == rb.box.y2);
        CHECK(ra.score == rb.score);
        CHECK(ra.updated == rb.updated);
        CHECK(ra.box.x1 >= 0.0);
        CHECK(ra.box.y1 >= 0.0);
        CHECK(ra.box.x2 <= static_cast<double>(width));
        CHECK(ra.box.y2 <= static_cast<double>(height));
        CHECK(ra.box.w() >= 2.0);
        CHECK(ra.box.h() >= 2.0);
    }
    CHECK(a.update_frames() == b.update_frames());
}

TEST_CASE("tracker matches a from-scratch pipeline replay") {
    const int64_t width = 192, height = 144;
    std::vector<Tensor> frames;
    Rng frng(17);
    for (int t = 0; t < 40; ++t)
        frames.push_back(make_frame(width, height, 55.0 + 2.0 * t, 50.0 + 1.2 * t, frng));
    const BBox init{42, 36, 70, 66};

    TrackerOptions opt;
    opt.policy = UpdatePolicy{1, 0.25};

    TrackNet net(tiny_model(), 9);
    Tracker tracker(net, opt);
    tracker.init(frames[0], init);

    // Independent replay with the same network weights: anchor template
    // feature frozen at init, cached representations refreshed only when the
    // replayed gate fires, and always rebuilt with the original template.
    ad::NoGradGuard ng;
    const Tensor window = cosine_window(opt.search_size / Backbone::kStride);
    const CropSpec tspec = crop_region(init, opt.template_offset);
    const ad::Var template_feat = feat(
        net, extract_crop(frames[0], tspec.cx, tspec.cy, tspec.side, opt.template_size));
    ad::Var search_feat, cached;
    auto refresh = [&](const Tensor& frame, const BBox& box) {
        const CropSpec spec = crop_region(box, opt.search_offset);
        const Tensor search =
            extract_crop(frame, spec.cx, spec.cy, spec.side, opt.search_size);
        search_feat = feat(net, search);
        cached = net.relation_block(feat(net, center_crop(search, opt.template_size)),
                                    template_feat, false);
    };
    refresh(frames[0], init);

    BBox prev = init;
    double avg = 1.0;
    int64_t counter = 0;
    std::vector<int64_t> fired;
    for (size_t t = 1; t < frames.size(); ++t) {
        const CropSpec spec = crop_region(prev, opt.search_offset);
        const Tensor crop =
            extract_crop(frames[t], spec.cx, spec.cy, spec.side, opt.search_size);
        const ad::Var f_t = feat(net, crop);
        const ad::Var omega_s = net.relation_block(f_t, search_feat, false);
        const HeadOutputs out = net.predict(cached, omega_s, f_t, false);
        const Decoded dec =
            decode_prediction(out.cls->val, out.box->val,
                              static_cast<double>(opt.search_size), window,
                              opt.window_weight);
        const BBox box =
            replic_sane(box_to_frame(dec.box, spec, opt.search_size),
                        static_cast<double>(width), static_cast<double>(height));
        counter += 1;
        const bool update = counter >= opt.policy.n && dec.score > avg;
        if (update) counter = 0;
        avg = (1.0 - opt.policy.lambda_d) * avg + opt.policy.lambda_d * dec.score;
        if (update) {
            refresh(frames[t], box);
            fired.push_back(static_cast<int64_t>(t));
        }
        prev = box;

        const TrackResult res = tracker.track(frames[t]);
        CHECK(std::abs(res.box.x1 - box.x1) <= 1e-12);
        CHECK(std::abs(res.box.y1 - box.y1) <= 1e-12);
        CHECK(std::abs(res.box.x2 - box.x2) <= 1e-12);
        CHECK(std::abs(res.box.y2 - box.y2) <= 1e-12);
        CHECK(std::abs(res.score - dec.score) <= 1e-12);
        CHECK(res.updated == update);
        CHECK(std::abs(tracker.gate().average() - avg) <= 1e-12);
    }
    REQUIRE(!fired.empty());
    CHECK(tracker.update_frames() == fired);
}

TEST_CASE("no refreshes are recorded while the gate interval has not elapsed") {
    Rng rng(23);
    std::vector<Tensor> frames;
    for (int t = 0; t < 8; ++t)
        frames.push_back(make_frame(160, 120, 70.0 + t, 60.0, rng));

    TrackNet net(tiny_model(), 2);
    Tracker tracker(net, TrackerOptions{});
    tracker.init(frames[0], BBox{54, 44, 86, 76});
    for (size_t t = 1; t < frames.size(); ++t) tracker.track(frames[t]);
    CHECK(tracker.update_frames().empty());
    CHECK(tracker.gate().counter() == 7);
}

TEST_CASE("re-initializing clears tracker state") {
    Rng rng(29);
    const Tensor f0 = make_frame(160, 120, 70.0, 60.0, rng);
    const Tensor f1 = make_frame(160, 120, 72.0, 61.0, rng);

    TrackerOptions opt;
    opt.policy = UpdatePolicy{1, 0.25};
    TrackNet net(tiny_model(), 13);
    Tracker tracker(net, opt);
    tracker.init(f0, BBox{54, 44, 86, 76});
    for (int r = 0; r < 12; ++r) tracker.track(f1);

    tracker.init(f0, BBox{54, 44, 86, 76});
    CHECK(tracker.update_frames().empty());
    CHECK(tracker.gate().counter() == 0);
    CHECK(tracker.gate().average() == 1.0);
    CHECK(tracker.last_box().x1 == 54.0);
}
