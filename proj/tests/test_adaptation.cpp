#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "mftrack/adaptation.hpp"
#include "mftrack/nn.hpp"
#include "test_util.hpp"

namespace ad = mft::ad;
namespace nn = mft::nn;
namespace adapt = mft::adapt;
using mft::Tensor;
using testutil::randt;

namespace {

Tensor chan(std::initializer_list<double> v) {
    Tensor t({static_cast<int64_t>(v.size())});
    int64_t i = 0;
    for (double x : v) t[i++] = x;
    return t;
}

bool same_values(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    for (int64_t i = 0; i < a.numel(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

}  // namespace

TEST_CASE("mode names round-trip") {
    for (auto m : {adapt::Mode::Off, adapt::Mode::Dtta, adapt::Mode::Momentum,
                   adapt::Mode::Dua, adapt::Mode::AdaBn})
        CHECK(adapt::mode_from_string(adapt::mode_to_string(m)) == m);
    CHECK_THROWS_AS(adapt::mode_from_string("bogus"), std::invalid_argument);
}

TEST_CASE("blend takes the exact branch at lambda zero") {
    Tensor a = chan({1.0, -2.0, 3.0});
    Tensor poison = chan({1e300, std::nan(""), -1e300});
    auto out = adapt::blend(a, poison, 0.0);
    CHECK(same_values(out, a));

    auto mixed = adapt::blend(chan({0.0, 10.0}), chan({10.0, 0.0}), 0.25);
    CHECK(mixed[0] == 2.5);
    CHECK(mixed[1] == 7.5);
}

TEST_CASE("batch norm training normalizes the batch and tracks running stats") {
    mft::Rng rng(201);
    nn::BatchNorm bn("b", 3);
    auto x = ad::constant(randt({4, 3, 5, 5}, rng, -2.0, 3.0));

    Tensor bm, bv;
    nn::channel_stats(x->val, bm, bv);

    auto out = bn.forward(x, true);
    Tensor om, ov;
    nn::channel_stats(out->val, om, ov);
    for (int64_t c = 0; c < 3; ++c) {
        CHECK(std::abs(om[c]) <= 1e-9);
        CHECK(std::abs(ov[c] - bv[c] / (bv[c] + 1e-5)) <= 1e-9);
    }
    for (int64_t c = 0; c < 3; ++c) {
        CHECK(std::abs(bn.running_mean[c] - 0.1 * bm[c]) <= 1e-12);
        CHECK(std::abs(bn.running_var[c] - (0.9 + 0.1 * bv[c])) <= 1e-12);
    }

    // second step compounds with the same momentum
    const Tensor rm1 = bn.running_mean, rv1 = bn.running_var;
    auto x2 = ad::constant(randt({4, 3, 5, 5}, rng, -1.0, 1.0));
    Tensor bm2, bv2;
    nn::channel_stats(x2->val, bm2, bv2);
    bn.forward(x2, true);
    for (int64_t c = 0; c < 3; ++c) {
        CHECK(std::abs(bn.running_mean[c] - (0.9 * rm1[c] + 0.1 * bm2[c])) <= 1e-12);
        CHECK(std::abs(bn.running_var[c] - (0.9 * rv1[c] + 0.1 * bv2[c])) <= 1e-12);
    }
}

TEST_CASE("batch norm evaluation uses running statistics and the affine pair") {
    mft::Rng rng(202);
    nn::BatchNorm bn("b", 3);
    bn.running_mean = chan({0.5, -0.2, 1.0});
    bn.running_var = chan({2.0, 0.5, 1.5});
    for (int64_t c = 0; c < 3; ++c) {
        bn.gamma->val[c] = rng.uniform(0.5, 1.5);
        bn.beta->val[c] = rng.uniform(-0.5, 0.5);
    }

    auto x = ad::constant(randt({2, 3, 4, 4}, rng, -2.0, 2.0));
    auto out = bn.forward(x, false)->val;
    for (int64_t n = 0; n < 2; ++n)
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t i = 0; i < 16; ++i) {
                const double xn = (x->val[(n * 3 + c) * 16 + i] - bn.running_mean[c]) /
                                  std::sqrt(bn.running_var[c] + 1e-5);
                const double want = bn.gamma->val[c] * xn + bn.beta->val[c];
                CHECK(std::abs(out[(n * 3 + c) * 16 + i] - want) <= 1e-12);
            }

    // rank-2 inputs follow the same formula per feature
    auto x2 = ad::constant(randt({5, 3}, rng));
    auto out2 = bn.forward(x2, false)->val;
    for (int64_t n = 0; n < 5; ++n)
        for (int64_t c = 0; c < 3; ++c) {
            const double xn = (x2->val[n * 3 + c] - bn.running_mean[c]) /
                              std::sqrt(bn.running_var[c] + 1e-5);
            CHECK(std::abs(out2[n * 3 + c] -
                           (bn.gamma->val[c] * xn + bn.beta->val[c])) <= 1e-12);
        }

    CHECK_THROWS_AS(bn.forward(ad::constant(Tensor({2, 4, 3, 3})), false),
                    std::invalid_argument);
}

TEST_CASE("channel stats match a direct computation") {
    mft::Rng rng(203);
    auto x = randt({3, 4, 2, 5}, rng, -3.0, 3.0);
    Tensor m, v;
    nn::channel_stats(x, m, v);
    for (int64_t c = 0; c < 4; ++c) {
        double acc = 0.0;
        for (int64_t n = 0; n < 3; ++n)
            for (int64_t i = 0; i < 10; ++i) acc += x[(n * 4 + c) * 10 + i];
        const double mu = acc / 30.0;
        double vacc = 0.0;
        for (int64_t n = 0; n < 3; ++n)
            for (int64_t i = 0; i < 10; ++i) {
                const double d = x[(n * 4 + c) * 10 + i] - mu;
                vacc += d * d;
            }
        CHECK(std::abs(m[c] - mu) <= 1e-12);
        CHECK(std::abs(v[c] - vacc / 30.0) <= 1e-12);
    }
}

TEST_CASE("lambda zero adaptation reproduces frozen inference exactly") {
    mft::Rng rng(204);
    nn::BatchNorm frozen("b", 3), adapted("b", 3);
    frozen.running_mean = chan({0.5, -0.2, 1.0});
    frozen.running_var = chan({2.0, 0.5, 1.5});
    adapted.running_mean = frozen.running_mean;
    adapted.running_var = frozen.running_var;

    adapt::Config cfg;
    cfg.mode = adapt::Mode::Dtta;
    cfg.lambda_bn = 0.0;
    adapted.set_adaptation(&cfg);

    auto x = ad::constant(randt({1, 3, 6, 6}, rng, -2.0, 2.0));
    auto yf = frozen.forward(x, false)->val;
    auto ya = adapted.forward(x, false)->val;
    REQUIRE(yf.same_shape(ya));
    for (int64_t i = 0; i < yf.numel(); ++i) CHECK(yf[i] == ya[i]);
}

TEST_CASE("anchored blending is memoryless and matches the closed form") {
    mft::Rng rng(205);
    nn::BatchNorm bn("head.bn", 3);
    bn.running_mean = chan({0.5, -0.2, 1.0});
    bn.running_var = chan({2.0, 0.5, 1.5});

    adapt::Config cfg;
    cfg.mode = adapt::Mode::Dtta;
    cfg.lambda_bn = 0.1;
    bn.set_adaptation(&cfg);

    std::vector<nn::BnEvalRecord> records;
    nn::BnObserver obs = [&](const nn::BnEvalRecord& r) { records.push_back(r); };
    bn.set_observer(&obs);

    auto x1 = ad::constant(randt({1, 3, 6, 6}, rng, -2.0, 2.0));
    auto x2 = ad::constant(randt({1, 3, 6, 6}, rng, 1.0, 4.0));

    auto first = bn.forward(x1, false)->val;
    bn.forward(x2, false);
    auto again = bn.forward(x1, false)->val;
    REQUIRE(records.size() == 3);

    // same input, same statistics, regardless of what came between
    for (int64_t i = 0; i < first.numel(); ++i) CHECK(first[i] == again[i]);
    CHECK(same_values(records[0].eff_mean, records[2].eff_mean));
    CHECK(same_values(records[0].eff_var, records[2].eff_var));

    Tensor im, iv;
    nn::channel_stats(x1->val, im, iv);
    for (int64_t c = 0; c < 3; ++c) {
        CHECK(std::abs(records[0].eff_mean[c] -
                       (0.9 * bn.running_mean[c] + 0.1 * im[c])) <= 1e-15);
        CHECK(std::abs(records[0].eff_var[c] -
                       (0.9 * bn.running_var[c] + 0.1 * iv[c])) <= 1e-15);
        CHECK(records[0].layer == "head.bn");
        CHECK(records[0].src_mean[c] == bn.running_mean[c]);
        CHECK(records[0].inst_mean[c] == im[c]);
    }

    // the blended statistics actually drive the normalization
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t i = 0; i < 36; ++i) {
            const double want = (x1->val[c * 36 + i] - records[0].eff_mean[c]) /
                                std::sqrt(records[0].eff_var[c] + 1e-5);
            CHECK(std::abs(first[c * 36 + i] - want) <= 1e-12);
        }
}

TEST_CASE("recursive baselines start frozen and then drift") {
    adapt::Config cfg;
    cfg.mode = adapt::Mode::Momentum;
    adapt::LayerState st;
    const Tensor src_m = chan({0.0}), src_v = chan({1.0});
    const Tensor inst_m = chan({1.0}), inst_v = chan({2.0});
    adapt::reset_state(cfg, st, src_m, src_v);

    Tensor em, ev;
    adapt::effective_stats(cfg, st, src_m, src_v, inst_m, inst_v, em, ev);
    CHECK(em[0] == 0.0);
    CHECK(ev[0] == 1.0);

    adapt::effective_stats(cfg, st, src_m, src_v, inst_m, inst_v, em, ev);
    CHECK(std::abs(em[0] - 1.0 / 17.0) <= 1e-12);

    adapt::effective_stats(cfg, st, src_m, src_v, inst_m, inst_v, em, ev);
    CHECK(std::abs(em[0] - 33.0 / 289.0) <= 1e-12);

    // under a constant stream the recursion approaches the instance stats
    double prev = em[0];
    for (int i = 0; i < 20; ++i) {
        adapt::effective_stats(cfg, st, src_m, src_v, inst_m, inst_v, em, ev);
        CHECK(em[0] > prev);
        prev = em[0];
    }
    CHECK(prev < 1.0);
}

TEST_CASE("decaying baseline follows its rate schedule down to the floor") {
    adapt::Config cfg;
    cfg.mode = adapt::Mode::Dua;
    adapt::LayerState st;
    const Tensor src_m = chan({0.0}), src_v = chan({1.0});
    const Tensor inst_m = chan({1.0}), inst_v = chan({2.0});
    adapt::reset_state(cfg, st, src_m, src_v);
    CHECK(st.dua_rate == 0.1);

    Tensor em, ev;
    adapt::effective_stats(cfg, st, src_m, src_v, inst_m, inst_v, em, ev);
    CHECK(em[0] == 0.0);
    CHECK(std::abs(st.dua_rate - 0.094) <= 1e-15);

    adapt::effective_stats(cfg, st, src_m, src_v, inst_m, inst_v, em, ev);
    CHECK(std::abs(em[0] - 0.1) <= 1e-12);
    CHECK(std::abs(st.dua_rate - 0.08836) <= 1e-15);

    adapt::effective_stats(cfg, st, src_m, src_v, inst_m, inst_v, em, ev);
    CHECK(std::abs(em[0] - 0.1846) <= 1e-12);

    for (int i = 0; i < 60; ++i)
        adapt::effective_stats(cfg, st, src_m, src_v, inst_m, inst_v, em, ev);
    CHECK(st.dua_rate == 0.005);
}

TEST_CASE("instance-only mode normalizes each input by itself") {
    mft::Rng rng(206);
    nn::BatchNorm bn("b", 3);
    bn.running_mean = chan({5.0, -5.0, 9.0});
    bn.running_var = chan({100.0, 100.0, 100.0});

    adapt::Config cfg;
    cfg.mode = adapt::Mode::AdaBn;
    bn.set_adaptation(&cfg);

    auto x = ad::constant(randt({2, 3, 4, 4}, rng, -1.0, 1.0));
    auto out = bn.forward(x, false)->val;
    Tensor om, ov;
    nn::channel_stats(out, om, ov);
    for (int64_t c = 0; c < 3; ++c) CHECK(std::abs(om[c]) <= 1e-9);
}

TEST_CASE("reset restores the frozen state and evaluation never mutates it") {
    mft::Rng rng(207);
    nn::BatchNorm bn("b", 2);
    bn.running_mean = chan({0.3, -0.7});
    bn.running_var = chan({1.2, 0.8});
    const Tensor rm = bn.running_mean, rv = bn.running_var;

    adapt::Config cfg;
    cfg.mode = adapt::Mode::Momentum;
    bn.set_adaptation(&cfg);

    auto x1 = ad::constant(randt({1, 2, 5, 5}, rng, -2.0, 2.0));
    auto first = bn.forward(x1, false)->val;
    bn.forward(ad::constant(randt({1, 2, 5, 5}, rng, 2.0, 4.0)), false);
    auto drifted = bn.forward(x1, false)->val;
    bool differs = false;
    for (int64_t i = 0; i < first.numel(); ++i)
        if (first[i] != drifted[i]) differs = true;
    CHECK(differs);

    bn.reset_adaptation();
    auto back = bn.forward(x1, false)->val;
    for (int64_t i = 0; i < first.numel(); ++i) CHECK(first[i] == back[i]);

    // the frozen source statistics survived every bit of the above
    CHECK(same_values(bn.running_mean, rm));
    CHECK(same_values(bn.running_var, rv));

    // transient state is not a persistent buffer
    std::vector<nn::BufferRef> bufs;
    bn.collect_buffers(bufs);
    REQUIRE(bufs.size() == 2);
    CHECK(bufs[0].name == "b.running_mean");
    CHECK(bufs[1].name == "b.running_var");
}

TEST_CASE("adaptation blends drive gradients nowhere") {
    // eval-mode normalization under adaptation must not create graph edges
    // into gamma/beta beyond the usual affine, and must work under no-grad
    mft::Rng rng(208);
    nn::BatchNorm bn("b", 2);
    adapt::Config cfg;
    cfg.mode = adapt::Mode::Dtta;
    bn.set_adaptation(&cfg);
    ad::NoGradGuard g;
    auto out = bn.forward(ad::constant(randt({1, 2, 3, 3}, rng)), false);
    CHECK(out->val.numel() == 18);
    CHECK(!out->requires_grad);
}
