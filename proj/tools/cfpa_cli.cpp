// Command-line surface for the compressive FPA toolkit: aperture and scene
// generation, measurement simulation, dataset synthesis, correction-network
// training, measurement calibration, reconstruction, and evaluation tables.
//
// Exit codes: 0 success, 2 bad arguments, 3 missing input, 4 numerical
// failure. Every command writes a resolved config (<out>.config) that
// reproduces the run bit-identically via --config.

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "cfpa/aperture.hpp"
#include "cfpa/calib.hpp"
#include "cfpa/optics.hpp"
#include "cfpa/pipeline.hpp"
#include "cfpa/recon.hpp"
#include "cfpa/sysmat.hpp"
#include "cfpa/tensorio.hpp"

namespace fs = std::filesystem;
using namespace cfpa;

namespace {

struct MissingInput : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require_file(const std::string& path) {
    if (!fs::exists(path)) throw MissingInput("missing input: " + path);
}

void write_resolved_config(CLI::App* sub, const std::string& out_base) {
    std::ofstream os(out_base + ".config");
    os << sub->config_to_str(true, false);
}

void add_config_option(CLI::App* sub) {
    sub->set_config("--config", "", "Load option values from a key=value file");
    sub->allow_config_extras(false);
}

void save_aperture(const std::string& path, const CodedAperture& ap, bool markers, bool tiled) {
    write_tensor(path, TensorContainer::from_mask(ap.base));
    std::ofstream mf(path + ".manifest.txt");
    mf << "rows = " << ap.base.rows << "\n";
    mf << "cols = " << ap.base.cols << "\n";
    mf << "s1 = " << ap.sr.s1 << "\n";
    mf << "s2 = " << ap.sr.s2 << "\n";
    mf << "open_ratio = " << ap.open_ratio << "\n";
    mf << "markers = " << (markers ? 1 : 0) << "\n";
    mf << "tiled = " << (tiled ? 1 : 0) << "\n";
}

CodedAperture load_aperture(const std::string& path) {
    require_file(path);
    require_file(path + ".manifest.txt");
    CodedAperture ap;
    ap.base = read_tensor(path).to_image();
    std::ifstream mf(path + ".manifest.txt");
    std::string key, eq;
    double value;
    int s1 = 0, s2 = 0;
    while (mf >> key >> eq >> value) {
        if (key == "s1") s1 = static_cast<int>(value);
        if (key == "s2") s2 = static_cast<int>(value);
        if (key == "open_ratio") ap.open_ratio = value;
        if (key == "markers" && value != 0) ap.markers = MarkerSpec{};
    }
    if (s1 < 1 || s2 < 1) throw std::invalid_argument("aperture manifest lacks block dims");
    ap.sr = SrFactor(s1, s2);
    return ap;
}

Image load_image_any(const std::string& path) {
    require_file(path);
    if (path.size() > 4 && path.substr(path.size() - 4) == ".pgm") return read_pgm(path);
    return read_tensor(path).to_image();
}

std::vector<Image> snapshot_masks(const CodedAperture& ap, int m) {
    const SnapshotSchedule sched = raster_schedule(m);
    std::vector<Image> masks;
    masks.reserve(m);
    for (const auto& sh : sched.shifts) masks.push_back(shift_mask(ap, sh.dx, sh.dy));
    return masks;
}

// ---------------------------------------------------------------- commands

int cmd_gen_scenes(const std::string& out_dir, int count, int size, uint64_t seed) {
    fs::create_directories(out_dir);
    for (int i = 0; i < count; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "scene_%03d.pgm", i);
        write_pgm16((fs::path(out_dir) / name).string(),
                    synthetic_scene(derive_seed(seed, i), size, size));
    }
    std::cerr << "wrote " << count << " scenes to " << out_dir << "\n";
    return 0;
}

int cmd_gen_aperture(int size_r, int size_c, int s1, int s2, double open_ratio, bool markers,
                     bool tiled, uint64_t seed, const std::string& out) {
    CodedAperture ap = tiled ? generate_tiled_aperture(size_r, size_c, s1, s2, open_ratio, seed)
                             : generate_aperture(size_r, size_c, s1, s2, open_ratio, seed);
    if (markers) ap = apply_markers(ap, MarkerSpec{});
    save_aperture(out, ap, markers, tiled);
    std::cerr << "aperture " << size_r << "x" << size_c << " (block " << s1 << "x" << s2
              << ", p=" << open_ratio << ") -> " << out << "\n";
    return 0;
}

int cmd_simulate(const std::string& scene_path, const std::string& aperture_path, int snapshots,
                 double radius, int psf_size, double input_psnr, double sigma_override,
                 uint64_t seed, const std::string& out, const std::string& ideal_out) {
    const Image scene = load_image_any(scene_path);
    const CodedAperture ap = load_aperture(aperture_path);
    if (scene.rows != ap.base.rows || scene.cols != ap.base.cols)
        throw std::invalid_argument("scene and aperture dimensions differ");
    const Psf psf = airy_psf(radius, psf_size);
    const auto masks = snapshot_masks(ap, snapshots);

    std::vector<Image> noiseless;
    for (const Image& mask : masks)
        noiseless.push_back(forward_measure(scene, mask, psf, ap.sr, 0.0, 0));
    const double sigma = (sigma_override >= 0.0)
                             ? sigma_override
                             : noise_sigma_for_psnr(noiseless, input_psnr);

    std::vector<Image> noisy;
    for (int i = 0; i < snapshots; ++i)
        noisy.push_back(
            forward_measure(scene, masks[i], psf, ap.sr, sigma, derive_seed(seed, i)));
    write_tensor(out, TensorContainer::from_images(noisy));
    if (!ideal_out.empty()) {
        std::vector<Image> ideal;
        for (const Image& mask : masks) ideal.push_back(ideal_measure(scene, mask, ap.sr));
        write_tensor(ideal_out, TensorContainer::from_images(ideal));
    }
    std::ofstream mf(out + ".manifest.txt");
    mf << "snapshots = " << snapshots << "\nradius = " << radius << "\npsf_size = " << psf_size
       << "\nsigma = " << sigma << "\nseed = " << seed << "\n";
    std::cerr << "simulated " << snapshots << " snapshots (sigma " << sigma << ") -> " << out
              << "\n";
    return 0;
}

int cmd_gen_dataset(const SimulationConfig& cfg, const DatasetSplits& splits,
                    const std::string& out_dir) {
    const Dataset ds = gen_dataset(cfg, splits);
    save_dataset(out_dir, ds, cfg);
    std::cerr << "dataset " << splits.train << "/" << splits.val << "/" << splits.test << " -> "
              << out_dir << "\n";
    return 0;
}

int cmd_train_calib(const std::string& dataset_dir, const std::string& out_dir,
                    CalibNetConfig net_cfg, TrainHyper hyper) {
    require_file(dataset_dir + "/manifest.tsv");
    const Dataset ds = load_dataset(dataset_dir);
    if (!ds.train.empty()) {
        net_cfg.s1 = ds.train[0].mask.rows / ds.train[0].y.rows;
        net_cfg.s2 = ds.train[0].mask.cols / ds.train[0].y.cols;
    }
    fs::create_directories(out_dir);
    if (hyper.log_path.empty()) hyper.log_path = (fs::path(out_dir) / "train_log.tsv").string();
    TrainResult result;
    CalibNet net = train_calib(net_cfg, ds.train, ds.val, hyper, &result);
    net.save(out_dir);
    std::cerr << "best val l1 " << result.best_val_l1 << " at epoch " << result.best_epoch
              << " -> " << out_dir << "\n";
    return 0;
}

int cmd_calibrate(const std::string& method_name, const std::string& measurements_path,
                  const std::string& aperture_path, const std::string& checkpoint, double radius,
                  int psf_size, int lucy_iters, const std::string& out) {
    require_file(measurements_path);
    const auto ys = read_tensor(measurements_path).to_images();
    const CorrectionMethod method = correction_method_from_string(method_name);

    CorrectionContext ctx;
    Psf psf;
    CalibNet net;
    std::vector<Image> masks;
    if (method == CorrectionMethod::Lucy) {
        psf = airy_psf(radius, psf_size);
        ctx.hr_psf = &psf;
        const CodedAperture ap = load_aperture(aperture_path);
        ctx.sr = ap.sr;
        ctx.lucy_iters = lucy_iters;
    } else if (method == CorrectionMethod::CalibFpa) {
        require_file(checkpoint + "/manifest.txt");
        net = CalibNet::load(checkpoint);
        const CodedAperture ap = load_aperture(aperture_path);
        masks = snapshot_masks(ap, static_cast<int>(ys.size()));
        ctx.net = &net;
        ctx.masks = &masks;
        ctx.bin = radius_bin(radius);
    }
    const auto corrected = correct_measurements(method, ys, ctx);
    write_tensor(out, TensorContainer::from_images(corrected));
    std::cerr << "calibrated " << ys.size() << " snapshots via " << method_name << " -> " << out
              << "\n";
    return 0;
}

int cmd_reconstruct(const std::string& measurements_path, const std::string& aperture_path,
                    const std::string& method_name, const std::string& calibration,
                    const std::string& matrix_form, const std::string& checkpoint, double radius,
                    int psf_size, int lucy_iters, const std::string& denoiser_name, double mu,
                    double epsilon, double sigma, double epsilon_multiplier, int max_iter,
                    double tol, double ridge, const std::string& out, const std::string& dump_pgm) {
    require_file(measurements_path);
    const auto t_start = std::chrono::steady_clock::now();
    const auto ys = read_tensor(measurements_path).to_images();
    const CodedAperture ap = load_aperture(aperture_path);
    const int m = static_cast<int>(ys.size());
    const SnapshotSchedule sched = raster_schedule(m);

    // Correction stage.
    CorrectionContext ctx;
    Psf psf;
    CalibNet net;
    std::vector<Image> masks;
    const CorrectionMethod cmethod = correction_method_from_string(calibration);
    if (cmethod == CorrectionMethod::Lucy) {
        psf = airy_psf(radius, psf_size);
        ctx.hr_psf = &psf;
        ctx.sr = ap.sr;
        ctx.lucy_iters = lucy_iters;
    } else if (cmethod == CorrectionMethod::CalibFpa) {
        require_file(checkpoint + "/manifest.txt");
        net = CalibNet::load(checkpoint);
        masks = snapshot_masks(ap, m);
        ctx.net = &net;
        ctx.masks = &masks;
        ctx.bin = radius_bin(radius);
    }
    const auto corrected = correct_measurements(cmethod, ys, ctx);
    const Eigen::VectorXd y = stack_measurements(corrected);

    // Matrix form.
    const ReconMethod method = recon_method_from_string(method_name);
    DenseSystemMatrix dense;
    BlockDiagSystemMatrix block;
    const bool use_dense = (matrix_form == "dense");
    if (use_dense) {
        const Psf dense_psf = airy_psf(radius, psf_size);
        dense = build_dense_row_probe(sched, ap, dense_psf, ap.sr);
    } else {
        block = build_block_diag(sched, ap, ap.sr);
    }

    Image rec;
    PpfpaTrace trace;
    double eps_used = 0.0;
    if (method == ReconMethod::LeastSquares) {
        rec = use_dense ? least_squares_solve(dense, y, ridge)
                        : least_squares_solve(block, y, ridge);
        for (double& v : rec.data) v = std::min(1.0, std::max(0.0, v));
    } else {
        PpfpaOptions opt;
        eps_used = (epsilon >= 0.0)
                       ? epsilon
                       : set_epsilon_from_noise(std::max(sigma, 0.0),
                                                use_dense ? dense.geom.rows() : block.geom.rows(),
                                                epsilon_multiplier);
        opt.epsilon = eps_used;
        opt.mu = mu;
        opt.stop.max_iter = max_iter;
        opt.stop.tol = tol;
        const DenoiserHandle denoiser = denoiser_from_string(denoiser_name);
        if (use_dense) {
            const NormalInverse ninv(dense);
            rec = ppfpa(make_operator(dense), ninv, y, denoiser, opt, &trace);
        } else {
            const NormalInverse ninv(block);
            rec = ppfpa(make_operator(block), ninv, y, denoiser, opt, &trace);
        }
    }
    write_tensor(out, TensorContainer::from_image(rec));
    if (!dump_pgm.empty()) write_pgm16(dump_pgm, rec);

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    std::ofstream mf(out + ".manifest.txt");
    mf << "method = " << method_name << "\ncalibration = " << calibration
       << "\nmatrix_form = " << matrix_form << "\nepsilon = " << eps_used << "\nmu = " << mu
       << "\nridge = " << ridge << "\niterations = " << trace.iterations
       << "\nresidual_r0 = " << trace.r0 << "\nresidual_r1 = " << trace.r1
       << "\nconverged = " << (trace.converged ? 1 : 0) << "\nwall_seconds = " << wall << "\n";
    std::cerr << "reconstruction (" << method_name << ", " << calibration << ", " << matrix_form
              << ") -> " << out << " in " << wall << " s\n";
    return 0;
}

int cmd_evaluate(const std::string& methods_csv, const std::string& bins_csv,
                 const std::string& snapshots_csv, const std::string& psnr_csv, int samples,
                 const std::string& recon, const std::string& checkpoint, int crop, int psf_size,
                 uint64_t seed, const std::string& out) {
    ExperimentAxes axes;
    auto split_csv = [](const std::string& csv) {
        std::vector<std::string> items;
        std::string item;
        std::istringstream ss(csv);
        while (std::getline(ss, item, ','))
            if (!item.empty()) items.push_back(item);
        return items;
    };
    axes.methods = split_csv(methods_csv);
    for (const auto& b : split_csv(bins_csv)) axes.bins.push_back(std::stoi(b));
    for (const auto& s : split_csv(snapshots_csv)) axes.snapshot_counts.push_back(std::stoi(s));
    for (const auto& p : split_csv(psnr_csv)) axes.input_psnr_levels.push_back(std::stod(p));
    axes.samples_per_cell = samples;
    axes.recon = recon_method_from_string(recon);
    axes.crop = crop;
    axes.psf_size = psf_size;
    axes.seed = seed;

    CalibNet net;
    if (!checkpoint.empty()) {
        require_file(checkpoint + "/manifest.txt");
        net = CalibNet::load(checkpoint);
        axes.net = &net;
    }
    const auto records = run_matrix_of_experiments(axes);
    write_eval_table(out, records);
    std::cerr << "evaluation: " << records.size() << " records -> " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"compressive FPA imaging toolkit"};
    app.require_subcommand(1);
    // Resolved-config dumps must carry every option's effective value.
    app.option_defaults()->always_capture_default(true);

    // ---- gen-scenes
    auto* sc = app.add_subcommand("gen-scenes", "Write procedural grayscale test scenes (PGM)");
    std::string sc_out = "scenes";
    int sc_count = 16, sc_size = 360;
    uint64_t sc_seed = 0;
    sc->add_option("--out", sc_out, "Output directory");
    sc->add_option("--count", sc_count, "Number of scenes");
    sc->add_option("--size", sc_size, "Scene side length in pixels");
    sc->add_option("--seed", sc_seed, "Master seed");
    add_config_option(sc);

    // ---- gen-aperture
    auto* ga = app.add_subcommand("gen-aperture", "Generate a coded aperture mask");
    int ga_rows = 360, ga_cols = 0, ga_s1 = 5, ga_s2 = 5;
    double ga_p = 0.8;
    bool ga_markers = false, ga_tiled = false;
    uint64_t ga_seed = 0;
    std::string ga_out = "aperture.cfpa";
    ga->add_option("--size", ga_rows, "Mask size (square) in HR pixels");
    ga->add_option("--cols", ga_cols, "Mask columns (defaults to --size)");
    ga->add_option("--block", ga_s1, "Block rows per LR pixel");
    ga->add_option("--block-cols", ga_s2, "Block cols per LR pixel (defaults to --block)");
    ga->add_option("--open-ratio", ga_p, "Fraction of transparent pixels per block");
    ga->add_flag("--markers", ga_markers, "Stamp the four corner alignment markers");
    ga->add_flag("--tiled", ga_tiled, "Periodic well-conditioned tile instead of random blocks");
    ga->add_option("--seed", ga_seed, "RNG seed");
    ga->add_option("--out", ga_out, "Output tensor path");
    add_config_option(ga);

    // ---- simulate
    auto* sim = app.add_subcommand("simulate", "Forward-measure a scene through the system");
    std::string sim_scene, sim_aperture, sim_out = "measurements.cfpa", sim_ideal;
    int sim_m = 5, sim_psf = 81;
    double sim_radius = 5.0, sim_psnr = 60.0, sim_sigma = -1.0;
    uint64_t sim_seed = 0;
    sim->add_option("--scene", sim_scene, "Scene image (.pgm or .cfpa)")->required();
    sim->add_option("--aperture", sim_aperture, "Aperture tensor")->required();
    sim->add_option("--snapshots", sim_m, "Snapshot count (raster schedule)");
    sim->add_option("--radius", sim_radius, "Blur kernel radius in HR pixels");
    sim->add_option("--psf-size", sim_psf, "Blur kernel size (odd)");
    sim->add_option("--input-psnr", sim_psnr, "Target measurement pSNR in dB");
    sim->add_option("--sigma", sim_sigma, "Noise std override (wins over --input-psnr)");
    sim->add_option("--seed", sim_seed, "Noise seed");
    sim->add_option("--out", sim_out, "Output measurement stack");
    sim->add_option("--ideal-out", sim_ideal, "Optional blur-free measurement stack");
    add_config_option(sim);

    // ---- gen-dataset
    auto* gd = app.add_subcommand("gen-dataset", "Synthesize a correction-training dataset");
    SimulationConfig gd_cfg;
    gd_cfg.r_min = 1.5;
    gd_cfg.r_max = 10.5 - 1e-9;
    std::string gd_out = "dataset", gd_protocol = "desk";
    int gd_train = -1, gd_val = -1, gd_test = -1;
    gd->add_option("--out", gd_out, "Output directory");
    gd->add_option("--protocol", gd_protocol, "desk or full sample counts")
        ->check(CLI::IsMember({"desk", "full"}));
    gd->add_option("--train", gd_train, "Training sample count override");
    gd->add_option("--val", gd_val, "Validation sample count override");
    gd->add_option("--test", gd_test, "Test sample count override");
    gd->add_option("--crop", gd_cfg.crop, "Scene crop size");
    gd->add_option("--block", gd_cfg.s1, "Block rows");
    gd->add_option("--block-cols", gd_cfg.s2, "Block cols (defaults to --block)");
    gd->add_option("--open-ratio", gd_cfg.open_ratio, "Aperture open ratio");
    gd->add_option("--radius-min", gd_cfg.r_min, "Lower blur radius bound");
    gd->add_option("--radius-max", gd_cfg.r_max, "Upper blur radius bound");
    gd->add_option("--input-psnr", gd_cfg.input_psnr_db, "Measurement pSNR in dB");
    gd->add_option("--psf-size", gd_cfg.psf_size, "Blur kernel size (odd)");
    gd->add_option("--scene-dir", gd_cfg.scene_dir, "Scene directory (procedural if empty)");
    gd->add_option("--seed", gd_cfg.seed, "Master seed");
    add_config_option(gd);

    // ---- train-calib
    auto* tc = app.add_subcommand("train-calib", "Train the measurement-correction network");
    std::string tc_dataset = "dataset", tc_out = "checkpoint";
    CalibNetConfig tc_net;
    TrainHyper tc_hyper;
    std::string tc_downsample = "unshuffle";
    bool tc_no_slm = false;
    tc->add_option("--dataset", tc_dataset, "Dataset directory");
    tc->add_option("--out", tc_out, "Checkpoint directory");
    tc->add_option("--epochs", tc_hyper.epochs, "Training epochs");
    tc->add_option("--batch", tc_hyper.batch_size, "Batch size");
    tc->add_option("--lr", tc_hyper.lr, "Initial learning rate");
    tc->add_option("--seed", tc_hyper.seed, "Training seed");
    tc->add_option("--channels", tc_net.channels, "Working channel count");
    tc->add_option("--slm-channels", tc_net.slm_channels, "Mask-coding channel count");
    tc->add_option("--fpa-layers", tc_net.fpa_layers, "Measurement-coding conv blocks");
    tc->add_option("--slm-layers", tc_net.slm_layers, "Mask-coding conv blocks");
    tc->add_option("--fusion-layers", tc_net.fusion_layers, "Fusion conv blocks");
    tc->add_option("--mlp-hidden", tc_net.mlp_hidden, "Radius MLP hidden width");
    tc->add_flag("--no-slm-coding", tc_no_slm, "Drop the mask-coding branch");
    tc->add_option("--downsample", tc_downsample, "unshuffle or strided mask downsampling")
        ->check(CLI::IsMember({"unshuffle", "strided"}));
    add_config_option(tc);

    // ---- calibrate
    auto* cal = app.add_subcommand("calibrate", "Correct a measurement stack");
    std::string cal_method = "raw", cal_meas, cal_aperture, cal_ckpt, cal_out = "corrected.cfpa";
    double cal_radius = 5.0;
    int cal_psf = 81, cal_iters = 30;
    cal->add_option("--method", cal_method, "raw, lucy, or calibfpa")
        ->check(CLI::IsMember({"raw", "lucy", "calibfpa"}));
    cal->add_option("--measurements", cal_meas, "Measurement stack")->required();
    cal->add_option("--aperture", cal_aperture, "Aperture tensor (lucy/calibfpa)");
    cal->add_option("--checkpoint", cal_ckpt, "Trained network directory (calibfpa)");
    cal->add_option("--radius", cal_radius, "Blur radius (lucy/calibfpa)");
    cal->add_option("--psf-size", cal_psf, "Blur kernel size");
    cal->add_option("--lucy-iters", cal_iters, "Deconvolution iterations");
    cal->add_option("--out", cal_out, "Corrected stack path");
    add_config_option(cal);

    // ---- reconstruct
    auto* rc = app.add_subcommand("reconstruct", "Recover the HR scene from measurements");
    std::string rc_meas, rc_aperture, rc_method = "ppfpa", rc_calibration = "raw";
    std::string rc_matrix = "block-diag", rc_ckpt, rc_denoiser = "tv", rc_out = "recon.cfpa";
    std::string rc_pgm;
    double rc_radius = 5.0, rc_mu = 0.05, rc_eps = -1.0, rc_sigma = 0.0, rc_mult = 1.0;
    double rc_tol = 1e-6, rc_ridge = 1e-6;
    int rc_psf = 81, rc_iters = 30, rc_max_iter = 300;
    rc->add_option("--measurements", rc_meas, "Measurement stack")->required();
    rc->add_option("--aperture", rc_aperture, "Aperture tensor")->required();
    rc->add_option("--method", rc_method, "least-squares or ppfpa")
        ->check(CLI::IsMember({"least-squares", "ppfpa"}));
    rc->add_option("--calibration", rc_calibration, "raw, lucy, or calibfpa")
        ->check(CLI::IsMember({"raw", "lucy", "calibfpa"}));
    rc->add_option("--matrix", rc_matrix, "block-diag or dense forward model")
        ->check(CLI::IsMember({"block-diag", "dense"}));
    rc->add_option("--checkpoint", rc_ckpt, "Trained network directory (calibfpa)");
    rc->add_option("--radius", rc_radius, "Blur radius (lucy/calibfpa/dense)");
    rc->add_option("--psf-size", rc_psf, "Blur kernel size");
    rc->add_option("--lucy-iters", rc_iters, "Deconvolution iterations");
    rc->add_option("--denoiser", rc_denoiser, "identity or tv prior");
    rc->add_option("--mu", rc_mu, "Denoiser strength");
    rc->add_option("--epsilon", rc_eps, "Data-consistency ball radius (overrides --sigma)");
    rc->add_option("--sigma", rc_sigma, "Noise std for the default ball radius");
    rc->add_option("--epsilon-multiplier", rc_mult, "Scale on sigma*sqrt(mM)");
    rc->add_option("--max-iter", rc_max_iter, "Solver iteration cap");
    rc->add_option("--tol", rc_tol, "Primal-residual stopping tolerance");
    rc->add_option("--ridge", rc_ridge, "Least-squares ridge parameter");
    rc->add_option("--out", rc_out, "Reconstruction tensor path");
    rc->add_option("--dump-pgm", rc_pgm, "Optional PGM dump of the reconstruction");
    add_config_option(rc);

    // ---- evaluate
    auto* ev = app.add_subcommand("evaluate", "Run the methods x bins x m x pSNR table");
    std::string ev_methods, ev_bins = "3", ev_snapshots = "5", ev_psnr = "60";
    std::string ev_recon = "least-squares", ev_ckpt, ev_out = "eval.tsv";
    int ev_samples = 4, ev_crop = 60, ev_psf = 81;
    uint64_t ev_seed = 0;
    ev->add_option("--methods", ev_methods, "Comma-separated correction methods (may be empty)");
    ev->add_option("--bins", ev_bins, "Comma-separated radius-bin indices");
    ev->add_option("--snapshots", ev_snapshots, "Comma-separated snapshot counts");
    ev->add_option("--psnr-levels", ev_psnr, "Comma-separated input pSNR levels");
    ev->add_option("--samples", ev_samples, "Scenes per cell");
    ev->add_option("--recon", ev_recon, "least-squares or ppfpa");
    ev->add_option("--checkpoint", ev_ckpt, "Trained network for the calibfpa method");
    ev->add_option("--crop", ev_crop, "Scene size");
    ev->add_option("--psf-size", ev_psf, "Blur kernel size");
    ev->add_option("--seed", ev_seed, "Master seed");
    ev->add_option("--out", ev_out, "Output TSV table");
    add_config_option(ev);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return (code == 0) ? 0 : 2;  // bad arguments map to exit 2
    }

    try {
        if (sc->parsed()) {
            fs::create_directories(sc_out);
            write_resolved_config(sc, (fs::path(sc_out) / "scenes").string());
            return cmd_gen_scenes(sc_out, sc_count, sc_size, sc_seed);
        }
        if (ga->parsed()) {
            if (ga_cols == 0) ga_cols = ga_rows;
            if (!ga->count("--block-cols")) ga_s2 = ga_s1;
            const int code = cmd_gen_aperture(ga_rows, ga_cols, ga_s1, ga_s2, ga_p, ga_markers,
                                              ga_tiled, ga_seed, ga_out);
            write_resolved_config(ga, ga_out);
            return code;
        }
        if (sim->parsed()) {
            const int code = cmd_simulate(sim_scene, sim_aperture, sim_m, sim_radius, sim_psf,
                                          sim_psnr, sim_sigma, sim_seed, sim_out, sim_ideal);
            write_resolved_config(sim, sim_out);
            return code;
        }
        if (gd->parsed()) {
            if (!gd->count("--block-cols")) gd_cfg.s2 = gd_cfg.s1;
            DatasetSplits splits =
                (gd_protocol == "full") ? full_scale_splits() : desk_scale_splits();
            if (gd_train >= 0) splits.train = gd_train;
            if (gd_val >= 0) splits.val = gd_val;
            if (gd_test >= 0) splits.test = gd_test;
            const int code = cmd_gen_dataset(gd_cfg, splits, gd_out);
            write_resolved_config(gd, (fs::path(gd_out) / "dataset").string());
            return code;
        }
        if (tc->parsed()) {
            tc_net.slm_coding = !tc_no_slm;
            tc_net.unshuffle_downsample = (tc_downsample == "unshuffle");
            const int code = cmd_train_calib(tc_dataset, tc_out, tc_net, tc_hyper);
            write_resolved_config(tc, (fs::path(tc_out) / "train").string());
            return code;
        }
        if (cal->parsed()) {
            const int code = cmd_calibrate(cal_method, cal_meas, cal_aperture, cal_ckpt,
                                           cal_radius, cal_psf, cal_iters, cal_out);
            write_resolved_config(cal, cal_out);
            return code;
        }
        if (rc->parsed()) {
            const int code = cmd_reconstruct(
                rc_meas, rc_aperture, rc_method, rc_calibration, rc_matrix, rc_ckpt, rc_radius,
                rc_psf, rc_iters, rc_denoiser, rc_mu, rc_eps, rc_sigma, rc_mult, rc_max_iter,
                rc_tol, rc_ridge, rc_out, rc_pgm);
            write_resolved_config(rc, rc_out);
            return code;
        }
        if (ev->parsed()) {
            const int code = cmd_evaluate(ev_methods, ev_bins, ev_snapshots, ev_psnr, ev_samples,
                                          ev_recon, ev_ckpt, ev_crop, ev_psf, ev_seed, ev_out);
            write_resolved_config(ev, ev_out);
            return code;
        }
    } catch (const MissingInput& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
    return 0;
}
