#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "cfpa/calib.hpp"
#include "cfpa/image.hpp"
#include "cfpa/recon.hpp"

namespace cfpa {

// Peak signal-to-noise ratio in dB; identical images report +infinity.
double psnr(const Image& ref, const Image& test, double peak = 1.0);

// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), k1 = 0.01,
// k2 = 0.03, dynamic range 1.0, mean over fully interior windows, times 100.
double ssim(const Image& ref, const Image& test);

// Noise std that hits a peak-referenced target pSNR on the noiseless stack.
double noise_sigma_for_psnr(const std::vector<Image>& noiseless_stack, double target_psnr_db);

// Deterministic procedural grayscale scene in [0,1]: smooth background with
// superposed shapes at several scales. Stand-in scene source for offline runs.
Image synthetic_scene(uint64_t seed, int rows, int cols);

struct SimulationConfig {
    std::string scene_dir;  // directory of PGM scenes; empty => procedural
    int crop = 60;
    int s1 = 5, s2 = 5;
    double open_ratio = 0.8;
    double r_min = 4.5, r_max = 5.5;
    int snapshots = 1;  // m
    double input_psnr_db = 60.0;
    int psf_size = 81;
    uint64_t seed = 0;

    SrFactor sr() const { return SrFactor(s1, s2); }
    void validate() const;
};

// Paper-protocol sample counts behind one switch; desk scale is the default.
struct DatasetSplits {
    int train = 64;
    int val = 16;
    int test = 16;
};
DatasetSplits desk_scale_splits();
DatasetSplits full_scale_splits();  // 5513 / 200 / 199

struct Dataset {
    std::vector<CalibSample> train, val, test;
};

// Fully seed-deterministic dataset of correction pairs; every sample draws
// its own scene crop, aperture, and radius from a derived stream.
Dataset gen_dataset(const SimulationConfig& cfg, const DatasetSplits& splits);

void save_dataset(const std::string& dir, const Dataset& ds, const SimulationConfig& cfg);
Dataset load_dataset(const std::string& dir);

// One evaluation cell result.
struct EvalRecord {
    std::string method;
    std::string stage;  // "correction" or "reconstruction"
    int bin = -1;
    int m = 1;
    double input_psnr_db = 0.0;
    double output_psnr_db = 0.0;
    double ssim_pct = 0.0;
    double wall_seconds = 0.0;
    bool skipped = false;
    std::string note;
};

enum class ReconMethod { LeastSquares, Ppfpa };
ReconMethod recon_method_from_string(const std::string& name);

struct ExperimentAxes {
    std::vector<std::string> methods;  // raw | lucy | calibfpa
    std::vector<int> bins;             // radius-bin indices
    std::vector<int> snapshot_counts;
    std::vector<double> input_psnr_levels;
    int samples_per_cell = 4;
    ReconMethod recon = ReconMethod::LeastSquares;
    std::string denoiser = "tv";
    double mu = 0.05;
    double epsilon_multiplier = 1.0;
    int crop = 60;
    int s1 = 5, s2 = 5;
    double open_ratio = 0.8;
    int psf_size = 81;
    uint64_t seed = 0;
    CalibNet* net = nullptr;  // required by the calibfpa method
};

// Runs every cell of methods x bins x m x pSNR; cells whose requirements are
// missing are emitted as skipped records. Correction metrics compare the
// corrected stack against the ideal stack; reconstruction metrics compare the
// recovered image against the scene.
std::vector<EvalRecord> run_matrix_of_experiments(const ExperimentAxes& axes);

void write_eval_table(const std::string& path, const std::vector<EvalRecord>& records);

}  // namespace cfpa
