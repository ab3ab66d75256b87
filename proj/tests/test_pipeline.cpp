#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "cfpa/pipeline.hpp"
#include "cfpa/rng.hpp"
#include "cfpa/tensorio.hpp"

using namespace cfpa;

namespace {

Image random_image(int rows, int cols, uint64_t seed) {
    Rng rng(seed);
    Image img(rows, cols);
    for (auto& v : img.data) v = rng.uniform01();
    return img;
}

// Second pSNR implementation: extended-precision accumulation, reversed order.
double psnr_reference(const Image& ref, const Image& test, double peak) {
    long double mse = 0.0L;
    for (size_t i = ref.data.size(); i-- > 0;) {
        const long double d = static_cast<long double>(ref.data[i]) - test.data[i];
        mse += d * d;
    }
    mse /= static_cast<long double>(ref.data.size());
    return static_cast<double>(10.0L * std::log10(static_cast<long double>(peak) * peak / mse));
}

// Second SSIM implementation: moments via E[x^2] - mu^2 identities.
double ssim_reference(const Image& a, const Image& b) {
    const int W = 11;
    const double sigma = 1.5, c1 = 1e-4, c2 = 9e-4;
    std::vector<double> w(W * W);
    double wsum = 0;
    for (int i = 0; i < W; ++i)
        for (int j = 0; j < W; ++j) {
            const double dy = i - 5, dx = j - 5;
            w[i * W + j] = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
            wsum += w[i * W + j];
        }
    for (auto& v : w) v /= wsum;
    double total = 0;
    int count = 0;
    for (int y = 0; y + W <= a.rows; ++y)
        for (int x = 0; x + W <= a.cols; ++x) {
            double ea = 0, eb = 0, eaa = 0, ebb = 0, eab = 0;
            for (int i = 0; i < W; ++i)
                for (int j = 0; j < W; ++j) {
                    const double va = a(y + i, x + j), vb = b(y + i, x + j);
                    const double ww = w[i * W + j];
                    ea += ww * va;
                    eb += ww * vb;
                    eaa += ww * va * va;
                    ebb += ww * vb * vb;
                    eab += ww * va * vb;
                }
            const double va = eaa - ea * ea, vb = ebb - eb * eb, cov = eab - ea * eb;
            total += ((2 * ea * eb + c1) * (2 * cov + c2)) /
                     ((ea * ea + eb * eb + c1) * (va + vb + c2));
            ++count;
        }
    return 100.0 * total / count;
}

}  // namespace

TEST_CASE("psnr closed forms") {
    Image a(10, 10, 0.5);
    CHECK(std::isinf(psnr(a, a)));

    Image zero(10, 10, 0.0), step(10, 10, 0.01);
    CHECK(psnr(zero, step, 1.0) == doctest::Approx(40.0).epsilon(1e-12));

    const Image r = random_image(16, 16, 1);
    const Image t = random_image(16, 16, 2);
    CHECK(psnr(r, t, 1.0) == doctest::Approx(psnr_reference(r, t, 1.0)).epsilon(1e-9));

    Image wrong(9, 10, 0.0);
    CHECK_THROWS_AS(psnr(a, wrong), std::invalid_argument);
}

TEST_CASE("ssim values and symmetry") {
    const Image a = random_image(16, 16, 3);
    CHECK(ssim(a, a) == doctest::Approx(100.0).epsilon(1e-9));

    Image binary(16, 16, 0.0);
    for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 16; ++j) binary(i, j) = ((i / 4 + j / 4) % 2) ? 1.0 : 0.0;
    Image inverted(16, 16, 0.0);
    for (size_t i = 0; i < binary.data.size(); ++i) inverted.data[i] = 1.0 - binary.data[i];
    CHECK(ssim(binary, inverted) < -50.0);

    const Image b = random_image(16, 16, 4);
    CHECK(ssim(a, b) == doctest::Approx(ssim_reference(a, b)).epsilon(1e-6));
    CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));

    Image tiny(8, 8, 0.0);
    CHECK_THROWS_AS(ssim(tiny, tiny), std::invalid_argument);
}

TEST_CASE("noise sigma calibration") {
    Image peak_one(4, 4, 0.0);
    peak_one(2, 2) = 1.0;
    CHECK(noise_sigma_for_psnr({peak_one}, 60.0) == doctest::Approx(1e-3).epsilon(1e-12));
    CHECK(noise_sigma_for_psnr({peak_one}, 300.0) < 1e-14);
    CHECK_THROWS_AS(noise_sigma_for_psnr({}, 60.0), std::invalid_argument);

    // Monte Carlo self-check on >= 1e4 samples.
    Image big(120, 120, 0.0);
    Rng rng(5);
    for (auto& v : big.data) v = rng.uniform01();
    const double target = 40.0;
    const double sigma = noise_sigma_for_psnr({big}, target);
    double peak = 0.0;
    for (double v : big.data) peak = std::max(peak, v);
    double mse = 0.0;
    for (size_t i = 0; i < big.size(); ++i) {
        const double n = rng.normal(0.0, sigma);
        mse += n * n;
    }
    mse /= static_cast<double>(big.size());
    const double achieved = 10.0 * std::log10(peak * peak / mse);
    CHECK(std::abs(achieved - target) < 0.5);
}

TEST_CASE("synthetic scenes are bounded and deterministic") {
    const Image a = synthetic_scene(9, 40, 40);
    const Image b = synthetic_scene(9, 40, 40);
    const Image c = synthetic_scene(10, 40, 40);
    CHECK(a.data == b.data);
    CHECK(a.data != c.data);
    double lo = 1e9, hi = -1e9;
    for (double v : a.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    CHECK(lo >= 0.0);
    CHECK(hi <= 1.0);
    CHECK(hi - lo > 0.5);  // scenes carry real contrast
}

TEST_CASE("gen_dataset shapes, bins, determinism") {
    SimulationConfig cfg;
    cfg.crop = 20;
    cfg.r_min = 3.0;
    cfg.r_max = 7.0;
    cfg.psf_size = 21;
    cfg.seed = 11;
    DatasetSplits splits{6, 3, 2};

    const Dataset ds = gen_dataset(cfg, splits);
    REQUIRE(ds.train.size() == 6);
    REQUIRE(ds.val.size() == 3);
    REQUIRE(ds.test.size() == 2);
    for (const auto& s : ds.train) {
        CHECK(s.mask.rows == 20);
        CHECK(s.y.rows == 4);
        CHECK(s.target.rows == 4);
        CHECK(s.bin == radius_bin(s.radius));
        CHECK(s.radius >= 3.0);
        CHECK(s.radius < 7.0);
        // Per-block open counts hold inside dataset masks too.
        int ones = 0;
        for (int a = 0; a < 5; ++a)
            for (int b = 0; b < 5; ++b) ones += s.mask(a, b) != 0.0;
        CHECK(ones == 20);
    }

    const Dataset again = gen_dataset(cfg, splits);
    for (size_t i = 0; i < ds.train.size(); ++i) {
        CHECK(ds.train[i].y.data == again.train[i].y.data);
        CHECK(ds.train[i].mask.data == again.train[i].mask.data);
        CHECK(ds.train[i].target.data == again.train[i].target.data);
    }

    // Validation splits draw different samples than training.
    CHECK(ds.train[0].y.data != ds.val[0].y.data);

    SimulationConfig bad = cfg;
    bad.crop = 21;
    CHECK_THROWS_AS(gen_dataset(bad, splits), std::invalid_argument);
}

TEST_CASE("dataset save/load round trip and byte determinism") {
    namespace fs = std::filesystem;
    SimulationConfig cfg;
    cfg.crop = 20;
    cfg.psf_size = 21;
    cfg.seed = 13;
    DatasetSplits splits{3, 1, 1};
    const Dataset ds = gen_dataset(cfg, splits);

    const std::string dir1 = (fs::temp_directory_path() / "cfpa_ds1").string();
    const std::string dir2 = (fs::temp_directory_path() / "cfpa_ds2").string();
    fs::remove_all(dir1);
    fs::remove_all(dir2);
    save_dataset(dir1, ds, cfg);
    save_dataset(dir2, ds, cfg);

    for (const auto& e : fs::directory_iterator(dir1)) {
        const auto other = fs::path(dir2) / e.path().filename();
        std::ifstream a(e.path(), std::ios::binary), b(other, std::ios::binary);
        std::vector<char> ba((std::istreambuf_iterator<char>(a)), {});
        std::vector<char> bb((std::istreambuf_iterator<char>(b)), {});
        CHECK(ba == bb);
    }

    const Dataset back = load_dataset(dir1);
    REQUIRE(back.train.size() == 3);
    REQUIRE(back.val.size() == 1);
    REQUIRE(back.test.size() == 1);
    for (size_t i = 0; i < back.train.size(); ++i) {
        CHECK(back.train[i].y.data == ds.train[i].y.data);
        CHECK(back.train[i].bin == ds.train[i].bin);
    }
    fs::remove_all(dir1);
    fs::remove_all(dir2);
}

TEST_CASE("experiment matrix handles empty and missing-checkpoint cells") {
    ExperimentAxes axes;
    axes.methods = {};
    axes.bins = {0};
    axes.snapshot_counts = {1};
    axes.input_psnr_levels = {60.0};
    CHECK(run_matrix_of_experiments(axes).empty());

    axes.methods = {"calibfpa"};
    axes.crop = 20;
    axes.psf_size = 21;
    axes.samples_per_cell = 1;
    const auto records = run_matrix_of_experiments(axes);
    REQUIRE(records.size() == 2);
    CHECK(records[0].skipped);
    CHECK(records[0].note == "missing checkpoint");
}

TEST_CASE("experiment matrix produces sane raw-method records") {
    ExperimentAxes axes;
    axes.methods = {"raw"};
    axes.bins = {0, 6};
    axes.snapshot_counts = {25};
    axes.input_psnr_levels = {60.0};
    axes.samples_per_cell = 2;
    axes.crop = 20;
    axes.psf_size = 21;
    axes.seed = 3;

    const auto records = run_matrix_of_experiments(axes);
    REQUIRE(records.size() == 4);

    const std::string dir = (std::filesystem::temp_directory_path() / "cfpa_eval").string();
    write_eval_table(dir + ".tsv", records);
    std::ifstream is(dir + ".tsv");
    std::string header;
    std::getline(is, header);
    CHECK(header.find("method") == 0);
    int lines = 0;
    for (std::string line; std::getline(is, line);) ++lines;
    CHECK(lines == 4);
    std::remove((dir + ".tsv").c_str());

    // Larger blur degrades raw correction quality.
    double psnr_bin0 = 0, psnr_bin6 = 0;
    for (const auto& r : records) {
        if (r.stage != "correction") continue;
        (r.bin == 0 ? psnr_bin0 : psnr_bin6) = r.output_psnr_db;
    }
    CHECK(psnr_bin0 > psnr_bin6);
}
