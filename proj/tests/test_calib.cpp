#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "cfpa/calib.hpp"
#include "cfpa/optics.hpp"
#include "cfpa/pipeline.hpp"
#include "cfpa/rng.hpp"

using namespace cfpa;

namespace {

Tensor4 random_tensor(int n, int c, int h, int w, Rng& rng, double scale = 1.0) {
    Tensor4 t(n, c, h, w);
    for (auto& v : t.v) v = scale * rng.normal();
    return t;
}

CalibNetConfig tiny_config() {
    CalibNetConfig cfg;
    cfg.s1 = 2;
    cfg.s2 = 2;
    cfg.fpa_layers = 2;
    cfg.slm_layers = 1;
    cfg.fusion_layers = 2;
    cfg.channels = 3;
    cfg.slm_channels = 2;
    cfg.mlp_hidden = 5;
    return cfg;
}

std::vector<CalibSample> blur_samples(int count, int crop, double r_lo, double r_hi,
                                      uint64_t seed) {
    SimulationConfig cfg;
    cfg.crop = crop;
    cfg.s1 = 5;
    cfg.s2 = 5;
    cfg.r_min = r_lo;
    cfg.r_max = r_hi;
    cfg.psf_size = 31;
    cfg.seed = seed;
    DatasetSplits splits{count, 0, 0};
    return gen_dataset(cfg, splits).train;
}

}  // namespace

TEST_CASE("radius bins partition the interval") {
    CHECK(radius_bin(5.0) == 3);
    CHECK(radius_bin(1.5) == 0);
    CHECK(radius_bin(10.49) == 8);
    CHECK(radius_bin(2.5) == 1);  // edges belong to the upper bin
    CHECK_THROWS_AS(radius_bin(1.4999), std::invalid_argument);
    CHECK_THROWS_AS(radius_bin(10.5), std::invalid_argument);

    for (double r = 1.5; r < 10.5; r += 0.0101) {
        const auto hot = radius_one_hot(r);
        int count = 0;
        for (int k = 0; k < kRadiusBins; ++k) {
            if (hot[k] != 0.0) {
                ++count;
                CHECK(r >= kRadiusMin + k);
                CHECK(r < kRadiusMin + k + 1.0);
            }
        }
        CHECK(count == 1);
    }
    CHECK(radius_bin_center(3) == doctest::Approx(5.0));
}

TEST_CASE("conv block forward matches an explicit reference") {
    Rng rng(21);
    ConvBlock blk;
    blk.configure(2, 3);
    blk.init(rng);
    Tensor4 x = random_tensor(2, 2, 4, 4, rng);

    ConvBlock copy = blk;
    Tensor4 got = copy.forward(x, true);

    // Reference: conv loops, then batch norm from explicit statistics, then
    // the leaky rectifier.
    Conv2d ref_conv = blk.conv;
    Tensor4 t = ref_conv.forward(x);
    const int cnt = t.n * t.h * t.w;
    Tensor4 expect = Tensor4::zeros_like(t);
    for (int c = 0; c < t.c; ++c) {
        double sum = 0.0, sq = 0.0;
        for (int b = 0; b < t.n; ++b)
            for (int i = 0; i < t.h; ++i)
                for (int j = 0; j < t.w; ++j) {
                    sum += t.at(b, c, i, j);
                    sq += t.at(b, c, i, j) * t.at(b, c, i, j);
                }
        const double mean = sum / cnt;
        const double var = sq / cnt - mean * mean;
        for (int b = 0; b < t.n; ++b)
            for (int i = 0; i < t.h; ++i)
                for (int j = 0; j < t.w; ++j) {
                    double v = (t.at(b, c, i, j) - mean) / std::sqrt(var + 1e-5);
                    if (v < 0.0) v *= 0.01;
                    expect.at(b, c, i, j) = v;
                }
    }
    for (size_t i = 0; i < got.v.size(); ++i)
        CHECK(got.v[i] == doctest::Approx(expect.v[i]).epsilon(1e-10));
}

TEST_CASE("calibnet output shape and residual identity") {
    const CalibNetConfig cfg = tiny_config();
    CalibNet net(cfg, 5);
    Rng rng(22);
    Tensor4 masks = random_tensor(2, 1, 8, 8, rng, 0.5);
    Tensor4 ys = random_tensor(2, 1, 4, 4, rng, 0.5);
    Tensor4 bins(2, kRadiusBins, 1, 1);
    bins.at(0, 3, 0, 0) = 1.0;
    bins.at(1, 7, 0, 0) = 1.0;

    // Freshly constructed nets carry a zero output conv: exact identity on y.
    Tensor4 out = net.forward(masks, ys, bins, false);
    REQUIRE(out.same_shape(ys));
    CHECK(out.v == ys.v);

    // Two evaluations of the same parameters are bit-identical.
    for (Param* p : net.parameters())
        for (auto& w : p->value.v) w += 0.01;
    Tensor4 a = net.forward(masks, ys, bins, false);
    Tensor4 b = net.forward(masks, ys, bins, false);
    CHECK(a.v == b.v);
    CHECK(a.v != ys.v);
}

TEST_CASE("calibnet end-to-end gradients") {
    const CalibNetConfig cfg = tiny_config();
    Rng rng(23);
    for (int variant = 0; variant < 3; ++variant) {
        CalibNetConfig c = cfg;
        if (variant == 1) c.unshuffle_downsample = false;
        if (variant == 2) c.slm_coding = false;
        CalibNet net(c, 40 + variant);
        // Nonzero output conv so its gradient path is exercised.
        auto params = net.parameters();
        for (Param* p : params)
            for (auto& w : p->value.v)
                if (w == 0.0) w = 0.05 * rng.normal();

        Tensor4 masks = random_tensor(2, 1, 6, 6, rng, 0.5);
        Tensor4 ys = random_tensor(2, 1, 3, 3, rng, 0.5);
        Tensor4 bins(2, kRadiusBins, 1, 1);
        bins.at(0, 2, 0, 0) = 1.0;
        bins.at(1, 6, 0, 0) = 1.0;
        Tensor4 weights = random_tensor(2, 1, 3, 3, rng);

        net.zero_grad();
        Tensor4 out = net.forward(masks, ys, bins, true);
        net.backward(weights);

        const double h = 1e-5;
        double worst = 0.0;
        int checked = 0;
        for (Param* p : params) {
            for (size_t i = 0; i < p->value.v.size(); i += 7) {  // strided subsample
                const double save = p->value.v[i];
                auto eval = [&]() {
                    CalibNet probe = net;
                    Tensor4 o = probe.forward(masks, ys, bins, true);
                    double acc = 0.0;
                    for (size_t k = 0; k < o.v.size(); ++k) acc += o.v[k] * weights.v[k];
                    return acc;
                };
                p->value.v[i] = save + h;
                const double lp = eval();
                p->value.v[i] = save - h;
                const double lm = eval();
                p->value.v[i] = save;
                const double fd = (lp - lm) / (2 * h);
                const double an = p->grad.v[i];
                if (std::abs(fd) < 1e-10 && std::abs(an) < 1e-10) continue;
                worst = std::max(worst,
                                 std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}));
                ++checked;
            }
        }
        CHECK(checked > 50);
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("checkpoint save/load round trip") {
    const CalibNetConfig cfg = tiny_config();
    CalibNet net(cfg, 77);
    Rng rng(24);
    for (Param* p : net.parameters())
        for (auto& w : p->value.v) w += 0.1 * rng.normal();

    const std::string dir =
        (std::filesystem::temp_directory_path() / "cfpa_ckpt_test").string();
    net.save(dir);
    CalibNet loaded = CalibNet::load(dir);

    Tensor4 masks = random_tensor(1, 1, 8, 8, rng, 0.5);
    Tensor4 ys = random_tensor(1, 1, 4, 4, rng, 0.5);
    Tensor4 bins(1, kRadiusBins, 1, 1);
    bins.at(0, 4, 0, 0) = 1.0;
    Tensor4 a = net.forward(masks, ys, bins, false);
    Tensor4 b = loaded.forward(masks, ys, bins, false);
    CHECK(a.v == b.v);
    std::filesystem::remove_all(dir);
}

TEST_CASE("training improves a small blurred problem and is reproducible") {
    CalibNetConfig cfg;
    cfg.s1 = 5;
    cfg.s2 = 5;
    cfg.channels = 8;
    cfg.slm_channels = 2;
    cfg.fusion_layers = 3;
    cfg.mlp_hidden = 16;

    const auto train_set = blur_samples(12, 20, 4.5, 5.5, 900);
    const auto val_set = blur_samples(4, 20, 4.5, 5.5, 901);

    TrainHyper hyper;
    hyper.batch_size = 4;
    hyper.epochs = 6;
    hyper.seed = 3;

    TrainResult res1, res2;
    CalibNet net1 = train_calib(cfg, train_set, val_set, hyper, &res1);
    CalibNet net2 = train_calib(cfg, train_set, val_set, hyper, &res2);

    REQUIRE(res1.history.size() == 6);
    CHECK(res1.best_val_l1 <= res1.history.front().val_l1);
    CHECK(res1.best_val_l1 == res2.best_val_l1);  // bitwise reproducible
    auto t1 = net1.named_tensors();
    auto t2 = net2.named_tensors();
    for (size_t i = 0; i < t1.size(); ++i) CHECK(t1[i].second->v == t2[i].second->v);

    // lr decays by the fixed factor after each epoch.
    CHECK(res1.history[1].lr == doctest::Approx(res1.history[0].lr * 0.999).epsilon(1e-12));
}

TEST_CASE("identity problems keep validation loss at the identity optimum") {
    // psf = delta makes y equal the target; the fresh network is already
    // optimal and training must not leave the optimum.
    SimulationConfig scfg;
    scfg.crop = 20;
    scfg.psf_size = 31;
    scfg.seed = 7;
    DatasetSplits splits{8, 4, 0};
    Dataset ds = gen_dataset(scfg, splits);
    for (auto& s : ds.train) s.y = s.target;
    for (auto& s : ds.val) s.y = s.target;

    CalibNetConfig cfg;
    cfg.s1 = 5;
    cfg.s2 = 5;
    cfg.channels = 4;
    cfg.slm_channels = 2;
    cfg.fusion_layers = 2;
    TrainHyper hyper;
    hyper.batch_size = 4;
    hyper.epochs = 2;
    TrainResult res;
    train_calib(cfg, ds.train, ds.val, hyper, &res);
    CHECK(res.best_val_l1 == 0.0);
}

TEST_CASE("training rejects bad input") {
    CalibNetConfig cfg = tiny_config();
    TrainHyper hyper;
    CHECK_THROWS_AS(train_calib(cfg, {}, {}, hyper), std::invalid_argument);
}

TEST_CASE("lr-domain kernel from the HR kernel") {
    const Psf hr = airy_psf(5.0, 81);
    const Psf lr = lr_domain_psf(hr, SrFactor(5, 5));
    CHECK(lr.size == 17);
    double sum = 0.0;
    for (double v : lr.kernel) {
        CHECK(v >= 0.0);
        sum += v;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    // Peak stays centered.
    const int c = lr.center();
    for (int i = 0; i < lr.size; ++i)
        for (int j = 0; j < lr.size; ++j)
            if (i != c || j != c) CHECK(lr.at(i, j) <= lr.at(c, c));

    const Psf d = lr_domain_psf(delta_psf(5), SrFactor(5, 5));
    CHECK(d.at(d.center(), d.center()) == doctest::Approx(1.0));
}

TEST_CASE("lucy richardson fixed point, positivity, flux") {
    Rng rng(25);
    Image y(12, 12);
    for (auto& v : y.data) v = 0.1 + rng.uniform01();

    const Image same = lucy_richardson(y, delta_psf(1), 7);
    for (size_t i = 0; i < y.data.size(); ++i)
        CHECK(same.data[i] == doctest::Approx(y.data[i]).epsilon(1e-12));

    // Blurred circular toy: flux is conserved and blur is partially undone.
    Psf blur = lr_domain_psf(airy_psf(8.0, 41), SrFactor(5, 5));
    const Image ideal = synthetic_scene(5, 16, 16);
    const Image blurred = convolve2d_circular(ideal, blur);
    const Image deconv = lucy_richardson(blurred, blur, 30);

    double fin = 0.0, fout = 0.0;
    for (double v : blurred.data) fin += v;
    for (double v : deconv.data) {
        CHECK(v >= 0.0);
        fout += v;
    }
    CHECK(std::abs(fout - fin) / fin < 30 * 1e-6);
    CHECK(psnr(ideal, deconv) > psnr(ideal, blurred));

    CHECK_THROWS_AS(lucy_richardson(y, delta_psf(1), 0), std::invalid_argument);
}

TEST_CASE("correct_measurements dispatch") {
    Rng rng(26);
    std::vector<Image> ys;
    for (int i = 0; i < 3; ++i) {
        Image y(6, 6);
        for (auto& v : y.data) v = rng.uniform01();
        ys.push_back(y);
    }

    CorrectionContext empty;
    const auto raw = correct_measurements(CorrectionMethod::Raw, ys, empty);
    REQUIRE(raw.size() == 3);
    for (int i = 0; i < 3; ++i) CHECK(raw[i].data == ys[i].data);

    CHECK_THROWS_AS(correct_measurements(CorrectionMethod::Lucy, ys, empty),
                    std::invalid_argument);
    CHECK_THROWS_AS(correct_measurements(CorrectionMethod::CalibFpa, ys, empty),
                    std::invalid_argument);

    const Psf psf = airy_psf(3.0, 31);
    CorrectionContext lucy_ctx;
    lucy_ctx.hr_psf = &psf;
    lucy_ctx.sr = SrFactor(5, 5);
    lucy_ctx.lucy_iters = 3;
    const auto lucy = correct_measurements(CorrectionMethod::Lucy, ys, lucy_ctx);
    REQUIRE(lucy.size() == 3);
    // Per-snapshot and order-preserving: correcting a single snapshot gives
    // the same answer as its slot in the batch.
    const auto solo = correct_measurements(CorrectionMethod::Lucy, {ys[1]}, lucy_ctx);
    CHECK(solo[0].data == lucy[1].data);

    CHECK(correction_method_from_string("raw") == CorrectionMethod::Raw);
    CHECK_THROWS_AS(correction_method_from_string("nope"), std::invalid_argument);
}
