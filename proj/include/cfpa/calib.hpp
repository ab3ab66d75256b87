#pragma once

#include <array>
#include <string>

#include "cfpa/image.hpp"
#include "cfpa/optics.hpp"
#include "cfpa/tensornet.hpp"

namespace cfpa {

inline constexpr int kRadiusBins = 9;
inline constexpr double kRadiusMin = 1.5;
inline constexpr double kRadiusMax = 10.5;

// Bin k covers [1.5 + k, 2.5 + k); the nine bins partition [1.5, 10.5).
// Values exactly on an interior edge belong to the upper bin.
int radius_bin(double r);
std::array<double, kRadiusBins> radius_one_hot(double r);
double radius_bin_center(int bin);

// Architecture hyperparameters of the correction network. The two flags are
// the ablation switches (mask-coding branch on/off, pixel-unshuffle vs
// strided-convolution downsampling).
struct CalibNetConfig {
    int s1 = 5, s2 = 5;
    int fpa_layers = 2;     // measurement-coding conv blocks
    int slm_layers = 1;     // mask-coding conv blocks at HR resolution
    int fusion_layers = 6;  // fusion conv blocks
    int channels = 32;      // working channel count
    int slm_channels = 4;   // mask-coding channel count
    int mlp_hidden = 64;
    bool slm_coding = true;
    bool unshuffle_downsample = true;

    int latent_dim() const { return slm_coding ? 2 * channels : channels; }
};

// One correction training pair: mask and blurred/noisy measurement in, ideal
// measurement out, plus the radius-bin conditioning input.
struct CalibSample {
    Image mask;    // N1 x N2
    Image y;       // M1 x M2
    Image target;  // M1 x M2
    int bin = 0;
    double radius = 0.0;
};

// Convolution block: conv 3x3 (stride configurable) + batch norm + leaky ReLU.
struct ConvBlock {
    Conv2d conv;
    BatchNorm2d bn;
    LeakyReLU act;
    bool use_bn = true;

    void configure(int in, int out, int sy = 1, int sx = 1, bool with_bn = true);
    Tensor4 forward(const Tensor4& x, bool train);
    Tensor4 backward(const Tensor4& gy);
    void init(Rng& rng);
    void collect(std::vector<Param*>& out);
};

// Four-block measurement-correction network: radius coding (MLP on the bin
// one-hot), mask coding (HR convs + downsampling to LR), measurement coding
// (LR convs), and feature fusion with latent scaling and a residual output.
class CalibNet {
  public:
    CalibNet() = default;
    CalibNet(const CalibNetConfig& cfg, uint64_t init_seed);

    const CalibNetConfig& config() const { return cfg_; }

    // masks (B,1,N1,N2), ys (B,1,M1,M2), bins (B,9,1,1) -> (B,1,M1,M2)
    Tensor4 forward(const Tensor4& masks, const Tensor4& ys, const Tensor4& bins, bool train);
    void backward(const Tensor4& grad_out);

    // Single-sample eval-mode correction.
    Image correct(const Image& mask, const Image& y, int bin);

    std::vector<Param*> parameters();
    std::vector<std::pair<std::string, Tensor4*>> named_tensors();
    void zero_grad();

    void save(const std::string& dir) const;
    static CalibNet load(const std::string& dir);

  private:
    CalibNetConfig cfg_;
    Linear mlp1_, mlp2_;
    LeakyReLU mlp_act_;
    SoftplusFloor latent_guard_;
    std::vector<ConvBlock> slm_blocks_;
    ConvBlock strided_block_;  // used when unshuffle_downsample is off
    ConvBlock reduce_block_;
    std::vector<ConvBlock> fpa_blocks_;
    std::vector<ConvBlock> fusion_blocks_;
    Conv2d final_conv_;

    Tensor4 cached_dc_, cached_lat_, cached_pre_unshuffle_;
};

struct TrainHyper {
    int batch_size = 64;
    double lr = 1e-3;
    int epochs = 30;
    uint64_t seed = 0;
    std::string log_path;  // per-epoch TSV log when non-empty
};

struct EpochLog {
    int epoch;
    double train_l1;
    double val_l1;
    double lr;
};

struct TrainResult {
    double best_val_l1 = 0.0;
    int best_epoch = -1;
    std::vector<EpochLog> history;
};

// l1 training with Adam and per-epoch lr decay; returns the parameters with
// the best validation l1 seen across epochs.
CalibNet train_calib(const CalibNetConfig& cfg, const std::vector<CalibSample>& train_set,
                     const std::vector<CalibSample>& val_set, const TrainHyper& hyper,
                     TrainResult* result = nullptr);

// Box-average an HR kernel with the block stride and renormalize; the
// LR-domain blur used by the deconvolution baseline.
Psf lr_domain_psf(const Psf& hr_psf, const SrFactor& sr);

// Richardson-Lucy multiplicative deconvolution (circular boundary).
Image lucy_richardson(const Image& y, const Psf& psf_lr, int iters);

enum class CorrectionMethod { Raw, Lucy, CalibFpa };

CorrectionMethod correction_method_from_string(const std::string& name);
std::string to_string(CorrectionMethod m);

struct CorrectionContext {
    // lucy
    const Psf* hr_psf = nullptr;
    SrFactor sr;
    int lucy_iters = 30;
    // calibfpa
    CalibNet* net = nullptr;
    const std::vector<Image>* masks = nullptr;  // per-snapshot masks
    int bin = 0;
};

// Per-snapshot correction; raw is the identity.
std::vector<Image> correct_measurements(CorrectionMethod method, const std::vector<Image>& ys,
                                        const CorrectionContext& ctx);

}  // namespace cfpa
