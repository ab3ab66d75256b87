#include "cfpa/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cfpa/aperture.hpp"
#include "cfpa/optics.hpp"
#include "cfpa/rng.hpp"
#include "cfpa/tensorio.hpp"

namespace cfpa {

double psnr(const Image& ref, const Image& test, double peak) {
    require_same_shape(ref, test, "psnr");
    if (peak <= 0.0) throw std::invalid_argument("psnr: peak must be > 0");
    double mse = 0.0;
    for (size_t i = 0; i < ref.data.size(); ++i) {
        const double d = ref.data[i] - test.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(ref.data.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const Image& ref, const Image& test) {
    require_same_shape(ref, test, "ssim");
    constexpr int kWin = 11;
    constexpr double kSigma = 1.5;
    constexpr double kC1 = 0.01 * 0.01;  // (k1 L)^2, L = 1
    constexpr double kC2 = 0.03 * 0.03;
    if (ref.rows < kWin || ref.cols < kWin)
        throw std::invalid_argument("ssim: image smaller than the 11x11 window");

    double win[kWin][kWin];
    double wsum = 0.0;
    for (int i = 0; i < kWin; ++i)
        for (int j = 0; j < kWin; ++j) {
            const double dy = i - kWin / 2, dx = j - kWin / 2;
            win[i][j] = std::exp(-(dx * dx + dy * dy) / (2.0 * kSigma * kSigma));
            wsum += win[i][j];
        }
    for (auto& row : win)
        for (double& w : row) w /= wsum;

    double total = 0.0;
    int count = 0;
    for (int y = 0; y + kWin <= ref.rows; ++y) {
        for (int x = 0; x + kWin <= ref.cols; ++x) {
            double mu_a = 0.0, mu_b = 0.0;
            for (int i = 0; i < kWin; ++i)
                for (int j = 0; j < kWin; ++j) {
                    mu_a += win[i][j] * ref(y + i, x + j);
                    mu_b += win[i][j] * test(y + i, x + j);
                }
            double var_a = 0.0, var_b = 0.0, cov = 0.0;
            for (int i = 0; i < kWin; ++i)
                for (int j = 0; j < kWin; ++j) {
                    const double da = ref(y + i, x + j) - mu_a;
                    const double db = test(y + i, x + j) - mu_b;
                    var_a += win[i][j] * da * da;
                    var_b += win[i][j] * db * db;
                    cov += win[i][j] * da * db;
                }
            const double num = (2.0 * mu_a * mu_b + kC1) * (2.0 * cov + kC2);
            const double den = (mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2);
            total += num / den;
            ++count;
        }
    }
    return 100.0 * total / static_cast<double>(count);
}

double noise_sigma_for_psnr(const std::vector<Image>& noiseless_stack, double target_psnr_db) {
    if (noiseless_stack.empty())
        throw std::invalid_argument("noise_sigma_for_psnr: empty signal");
    if (!std::isfinite(target_psnr_db))
        throw std::invalid_argument("noise_sigma_for_psnr: target must be finite");
    double peak = 0.0;
    for (const Image& img : noiseless_stack)
        for (double v : img.data) peak = std::max(peak, v);
    return peak / std::pow(10.0, target_psnr_db / 20.0);
}

Image synthetic_scene(uint64_t seed, int rows, int cols) {
    Rng rng(derive_seed(seed, 0x5CE4E));
    Image img(rows, cols, 0.0);

    // Smooth background from a handful of broad Gaussian bumps.
    const int bumps = 6;
    for (int b = 0; b < bumps; ++b) {
        const double cy = rng.uniform(0.0, rows);
        const double cx = rng.uniform(0.0, cols);
        const double sy = rng.uniform(0.15, 0.5) * rows;
        const double sx = rng.uniform(0.15, 0.5) * cols;
        const double amp = rng.uniform(-0.6, 0.9);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) {
                const double dy = (i - cy) / sy, dx = (j - cx) / sx;
                img(i, j) += amp * std::exp(-0.5 * (dy * dy + dx * dx));
            }
    }
    // Piecewise shapes: rectangles, disks, and stripe bundles.
    const int shapes = 8;
    for (int sdx = 0; sdx < shapes; ++sdx) {
        const int kind = static_cast<int>(rng.uniform_int(3));
        const double amp = rng.uniform(-0.8, 0.8);
        if (kind == 0) {
            const int r0 = static_cast<int>(rng.uniform_int(rows));
            const int c0 = static_cast<int>(rng.uniform_int(cols));
            const int hgt = 2 + static_cast<int>(rng.uniform_int(rows / 2));
            const int wid = 2 + static_cast<int>(rng.uniform_int(cols / 2));
            for (int i = r0; i < std::min(rows, r0 + hgt); ++i)
                for (int j = c0; j < std::min(cols, c0 + wid); ++j) img(i, j) += amp;
        } else if (kind == 1) {
            const double cy = rng.uniform(0.0, rows), cx = rng.uniform(0.0, cols);
            const double rad = rng.uniform(2.0, 0.3 * std::min(rows, cols));
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < cols; ++j)
                    if (std::hypot(i - cy, j - cx) < rad) img(i, j) += amp;
        } else {
            const int period = 2 + static_cast<int>(rng.uniform_int(6));
            const bool horizontal = rng.uniform01() < 0.5;
            const int lo = static_cast<int>(rng.uniform_int(rows / 2));
            const int span = 4 + static_cast<int>(rng.uniform_int(rows / 2));
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < cols; ++j) {
                    const int along = horizontal ? i : j;
                    const int across = horizontal ? j : i;
                    if (across >= lo && across < lo + span && (along / period) % 2 == 0)
                        img(i, j) += amp;
                }
        }
    }
    // Normalize to [0, 1].
    double lo = img.data[0], hi = img.data[0];
    for (double v : img.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = (hi > lo) ? hi - lo : 1.0;
    for (double& v : img.data) v = (v - lo) / span;
    return img;
}

void SimulationConfig::validate() const {
    if (crop < 1 || crop % s1 != 0 || crop % s2 != 0)
        throw std::invalid_argument("SimulationConfig: crop must be divisible by the block");
    if (!(r_min >= kRadiusMin && r_max <= kRadiusMax && r_min < r_max))
        throw std::invalid_argument("SimulationConfig: radius range must lie in [1.5, 10.5)");
    if (snapshots < 1) throw std::invalid_argument("SimulationConfig: snapshots must be >= 1");
    if (psf_size < 3 || psf_size % 2 == 0)
        throw std::invalid_argument("SimulationConfig: psf_size must be odd, >= 3");
}

DatasetSplits desk_scale_splits() { return {64, 16, 16}; }
DatasetSplits full_scale_splits() { return {5513, 200, 199}; }

namespace {

std::vector<std::string> list_scene_files(const std::string& dir) {
    namespace fs = std::filesystem;
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        const std::string ext = e.path().extension().string();
        if (ext == ".pgm" || ext == ".cfpa") files.push_back(e.path().string());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("no scene files (.pgm/.cfpa) in " + dir);
    return files;
}

Image load_scene(const std::string& path) {
    if (path.size() >= 5 && path.substr(path.size() - 5) == ".cfpa")
        return read_tensor(path).to_image();
    return read_pgm(path);
}

CalibSample make_sample(const SimulationConfig& cfg, const std::vector<std::string>& files,
                        uint64_t sample_seed, size_t sample_index) {
    Rng rng(sample_seed);

    Image scene;
    if (files.empty()) {
        scene = synthetic_scene(rng.next_u64(), cfg.crop, cfg.crop);
    } else {
        const Image full = load_scene(files[sample_index % files.size()]);
        if (full.rows < cfg.crop || full.cols < cfg.crop)
            throw std::runtime_error("scene smaller than crop size");
        const int r0 = static_cast<int>(rng.uniform_int(full.rows - cfg.crop + 1));
        const int c0 = static_cast<int>(rng.uniform_int(full.cols - cfg.crop + 1));
        scene = Image(cfg.crop, cfg.crop);
        for (int i = 0; i < cfg.crop; ++i)
            for (int j = 0; j < cfg.crop; ++j) scene(i, j) = full(r0 + i, c0 + j);
    }

    const uint64_t aperture_seed = rng.next_u64();
    const CodedAperture ap =
        generate_aperture(cfg.crop, cfg.crop, cfg.s1, cfg.s2, cfg.open_ratio, aperture_seed);
    const double r = rng.uniform(cfg.r_min, cfg.r_max);
    const Psf psf = airy_psf(r, cfg.psf_size);

    CalibSample s;
    s.mask = ap.base;
    s.radius = r;
    s.bin = radius_bin(r);
    s.target = ideal_measure(scene, s.mask, cfg.sr());

    const Image noiseless = forward_measure(scene, s.mask, psf, cfg.sr(), 0.0, 0);
    const double sigma = noise_sigma_for_psnr({noiseless}, cfg.input_psnr_db);
    s.y = forward_measure(scene, s.mask, psf, cfg.sr(), sigma, rng.next_u64());
    return s;
}

}  // namespace

Dataset gen_dataset(const SimulationConfig& cfg, const DatasetSplits& splits) {
    cfg.validate();
    std::vector<std::string> files;
    if (!cfg.scene_dir.empty()) files = list_scene_files(cfg.scene_dir);

    Dataset ds;
    uint64_t stream = 0;
    auto fill = [&](std::vector<CalibSample>& out, int count) {
        out.reserve(count);
        for (int i = 0; i < count; ++i, ++stream)
            out.push_back(make_sample(cfg, files, derive_seed(cfg.seed, stream), stream));
    };
    fill(ds.train, splits.train);
    fill(ds.val, splits.val);
    fill(ds.test, splits.test);
    return ds;
}

void save_dataset(const std::string& dir, const Dataset& ds, const SimulationConfig& cfg) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream mf(fs::path(dir) / "manifest.tsv");
    if (!mf) throw std::runtime_error("save_dataset: cannot write manifest");
    mf << "id\tsplit\tradius\tbin\tmask\ty\ttarget\n";
    int id = 0;
    auto dump = [&](const std::vector<CalibSample>& set, const char* split) {
        for (const CalibSample& s : set) {
            char tag[32];
            std::snprintf(tag, sizeof(tag), "sample_%05d", id);
            const std::string mask_f = std::string(tag) + ".mask.cfpa";
            const std::string y_f = std::string(tag) + ".y.cfpa";
            const std::string t_f = std::string(tag) + ".target.cfpa";
            write_tensor((fs::path(dir) / mask_f).string(), TensorContainer::from_mask(s.mask));
            write_tensor((fs::path(dir) / y_f).string(), TensorContainer::from_image(s.y));
            write_tensor((fs::path(dir) / t_f).string(), TensorContainer::from_image(s.target));
            mf << id << "\t" << split << "\t" << s.radius << "\t" << s.bin << "\t" << mask_f
               << "\t" << y_f << "\t" << t_f << "\n";
            ++id;
        }
    };
    dump(ds.train, "train");
    dump(ds.val, "val");
    dump(ds.test, "test");

    std::ofstream cf(fs::path(dir) / "dataset_config.txt");
    cf << "crop = " << cfg.crop << "\ns1 = " << cfg.s1 << "\ns2 = " << cfg.s2
       << "\nopen_ratio = " << cfg.open_ratio << "\nr_min = " << cfg.r_min
       << "\nr_max = " << cfg.r_max << "\nsnapshots = " << cfg.snapshots
       << "\ninput_psnr_db = " << cfg.input_psnr_db << "\npsf_size = " << cfg.psf_size
       << "\nseed = " << cfg.seed << "\nscene_dir = " << cfg.scene_dir << "\n";
}

Dataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream mf(fs::path(dir) / "manifest.tsv");
    if (!mf) throw std::runtime_error("load_dataset: cannot open manifest in " + dir);
    std::string line;
    std::getline(mf, line);  // header
    Dataset ds;
    while (std::getline(mf, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        int id, bin;
        double radius;
        std::string split, mask_f, y_f, t_f;
        ss >> id >> split >> radius >> bin >> mask_f >> y_f >> t_f;
        CalibSample s;
        s.mask = read_tensor((fs::path(dir) / mask_f).string()).to_image();
        s.y = read_tensor((fs::path(dir) / y_f).string()).to_image();
        s.target = read_tensor((fs::path(dir) / t_f).string()).to_image();
        s.radius = radius;
        s.bin = bin;
        auto* dst = (split == "train") ? &ds.train : (split == "val") ? &ds.val : &ds.test;
        dst->push_back(std::move(s));
    }
    return ds;
}

ReconMethod recon_method_from_string(const std::string& name) {
    if (name == "least-squares") return ReconMethod::LeastSquares;
    if (name == "ppfpa") return ReconMethod::Ppfpa;
    throw std::invalid_argument("unknown reconstruction method: " + name);
}

namespace {

struct CellScores {
    double psnr_sum = 0.0;
    double ssim_sum = 0.0;
    int count = 0;
};

}  // namespace

std::vector<EvalRecord> run_matrix_of_experiments(const ExperimentAxes& axes) {
    std::vector<EvalRecord> records;
    uint64_t cell_stream = 0;
    for (const std::string& method_name : axes.methods) {
        for (int bin : axes.bins) {
            for (int m : axes.snapshot_counts) {
                for (double level : axes.input_psnr_levels) {
                    ++cell_stream;
                    EvalRecord corr, recon;
                    corr.method = recon.method = method_name;
                    corr.stage = "correction";
                    recon.stage = "reconstruction";
                    corr.bin = recon.bin = bin;
                    corr.m = recon.m = m;
                    corr.input_psnr_db = recon.input_psnr_db = level;

                    CorrectionMethod method;
                    try {
                        method = correction_method_from_string(method_name);
                    } catch (const std::exception& e) {
                        corr.skipped = recon.skipped = true;
                        corr.note = recon.note = e.what();
                        records.push_back(corr);
                        records.push_back(recon);
                        continue;
                    }
                    if (method == CorrectionMethod::CalibFpa && axes.net == nullptr) {
                        corr.skipped = recon.skipped = true;
                        corr.note = recon.note = "missing checkpoint";
                        records.push_back(corr);
                        records.push_back(recon);
                        continue;
                    }

                    const auto t0 = std::chrono::steady_clock::now();
                    CellScores cs, rs;
                    const SrFactor sr(axes.s1, axes.s2);
                    for (int sample = 0; sample < axes.samples_per_cell; ++sample) {
                        Rng rng(derive_seed(axes.seed, (cell_stream << 16) + sample));
                        const Image scene =
                            synthetic_scene(rng.next_u64(), axes.crop, axes.crop);
                        const CodedAperture ap = generate_aperture(
                            axes.crop, axes.crop, axes.s1, axes.s2, axes.open_ratio,
                            rng.next_u64());
                        const double r =
                            rng.uniform(kRadiusMin + bin, kRadiusMin + bin + 1.0);
                        const Psf psf = airy_psf(r, axes.psf_size);
                        const SnapshotSchedule sched = raster_schedule(m);

                        std::vector<Image> masks, ideal, noisy;
                        for (int i = 0; i < m; ++i)
                            masks.push_back(
                                shift_mask(ap, sched.shifts[i].dx, sched.shifts[i].dy));
                        for (int i = 0; i < m; ++i) {
                            ideal.push_back(ideal_measure(scene, masks[i], sr));
                            noisy.push_back(forward_measure(scene, masks[i], psf, sr, 0.0, 0));
                        }
                        const double sigma = noise_sigma_for_psnr(noisy, level);
                        for (int i = 0; i < m; ++i)
                            noisy[i] =
                                forward_measure(scene, masks[i], psf, sr, sigma, rng.next_u64());

                        CorrectionContext ctx;
                        ctx.hr_psf = &psf;
                        ctx.sr = sr;
                        ctx.net = axes.net;
                        ctx.masks = &masks;
                        ctx.bin = bin;
                        const std::vector<Image> corrected =
                            correct_measurements(method, noisy, ctx);

                        // Correction quality: corrected stack vs ideal stack.
                        double peak = 0.0;
                        for (const Image& img : ideal)
                            for (double v : img.data) peak = std::max(peak, v);
                        double mse = 0.0;
                        size_t nelem = 0;
                        for (int i = 0; i < m; ++i)
                            for (size_t k = 0; k < ideal[i].data.size(); ++k) {
                                const double d = corrected[i].data[k] - ideal[i].data[k];
                                mse += d * d;
                                ++nelem;
                            }
                        mse /= static_cast<double>(nelem);
                        cs.psnr_sum +=
                            (mse == 0.0) ? 200.0 : 10.0 * std::log10(peak * peak / mse);
                        cs.count += 1;

                        // Reconstruction from corrected measurements with the
                        // blur-free block-diagonal model.
                        const BlockDiagSystemMatrix bd = build_block_diag(sched, ap, sr);
                        const Eigen::VectorXd yvec = stack_measurements(corrected);
                        Image rec;
                        if (axes.recon == ReconMethod::LeastSquares) {
                            rec = least_squares_solve(bd, yvec);
                            for (double& v : rec.data) v = std::min(1.0, std::max(0.0, v));
                        } else {
                            NormalInverse ninv(bd);
                            PpfpaOptions opt;
                            opt.epsilon = set_epsilon_from_noise(sigma, bd.geom.rows(),
                                                                 axes.epsilon_multiplier);
                            opt.mu = axes.mu;
                            rec = ppfpa(make_operator(bd), ninv, yvec,
                                        denoiser_from_string(axes.denoiser), opt);
                        }
                        rs.psnr_sum += std::min(psnr(scene, rec), 200.0);
                        rs.ssim_sum += ssim(scene, rec);
                        rs.count += 1;
                    }
                    const auto t1 = std::chrono::steady_clock::now();
                    const double wall =
                        std::chrono::duration<double>(t1 - t0).count() / 2.0;

                    corr.output_psnr_db = cs.psnr_sum / cs.count;
                    corr.wall_seconds = wall;
                    recon.output_psnr_db = rs.psnr_sum / rs.count;
                    recon.ssim_pct = rs.ssim_sum / rs.count;
                    recon.wall_seconds = wall;
                    records.push_back(corr);
                    records.push_back(recon);
                }
            }
        }
    }
    return records;
}

void write_eval_table(const std::string& path, const std::vector<EvalRecord>& records) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_eval_table: cannot open " + path);
    os << "method\tstage\tbin\tm\tinput_psnr_db\toutput_psnr_db\tssim_pct\twall_seconds\tskipped"
          "\tnote\n";
    for (const EvalRecord& r : records) {
        os << r.method << "\t" << r.stage << "\t" << r.bin << "\t" << r.m << "\t"
           << r.input_psnr_db << "\t" << r.output_psnr_db << "\t" << r.ssim_pct << "\t"
           << r.wall_seconds << "\t" << (r.skipped ? 1 : 0) << "\t" << r.note << "\n";
    }
}

}  // namespace cfpa
