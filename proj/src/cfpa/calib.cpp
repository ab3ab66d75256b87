#include "cfpa/calib.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "cfpa/tensorio.hpp"

namespace cfpa {

int radius_bin(double r) {
    if (!(r >= kRadiusMin && r < kRadiusMax))
        throw std::invalid_argument("radius_bin: r outside [1.5, 10.5)");
    int bin = static_cast<int>(std::floor(r - kRadiusMin));
    if (bin >= kRadiusBins) bin = kRadiusBins - 1;
    return bin;
}

std::array<double, kRadiusBins> radius_one_hot(double r) {
    std::array<double, kRadiusBins> v{};
    v[radius_bin(r)] = 1.0;
    return v;
}

double radius_bin_center(int bin) {
    if (bin < 0 || bin >= kRadiusBins) throw std::invalid_argument("radius_bin_center: bad bin");
    return kRadiusMin + bin + 0.5;
}

void ConvBlock::configure(int in, int out, int sy, int sx, bool with_bn) {
    conv.configure(in, out, 3, sy, sx, 1);
    use_bn = with_bn;
    if (with_bn) bn.configure(out);
}

Tensor4 ConvBlock::forward(const Tensor4& x, bool train) {
    Tensor4 t = conv.forward(x);
    if (use_bn) t = bn.forward(t, train);
    return act.forward(t);
}

Tensor4 ConvBlock::backward(const Tensor4& gy) {
    Tensor4 g = act.backward(gy);
    if (use_bn) g = bn.backward(g);
    return conv.backward(g);
}

void ConvBlock::init(Rng& rng) { conv.init_kaiming(rng); }

void ConvBlock::collect(std::vector<Param*>& out) {
    out.push_back(&conv.weight);
    out.push_back(&conv.bias);
    if (use_bn) {
        out.push_back(&bn.gamma);
        out.push_back(&bn.beta);
    }
}

CalibNet::CalibNet(const CalibNetConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
    if (cfg.fpa_layers < 1 || cfg.fusion_layers < 1 || cfg.channels < 1)
        throw std::invalid_argument("CalibNet: bad architecture config");
    Rng rng(derive_seed(init_seed, 0xCA11B));

    mlp1_.configure(kRadiusBins, cfg.mlp_hidden);
    mlp2_.configure(cfg.mlp_hidden, cfg.latent_dim());
    mlp1_.init_kaiming(rng);
    mlp2_.init_kaiming(rng);

    if (cfg.slm_coding) {
        slm_blocks_.resize(cfg.slm_layers);
        for (int i = 0; i < cfg.slm_layers; ++i) {
            slm_blocks_[i].configure(i == 0 ? 1 : cfg.slm_channels, cfg.slm_channels);
            slm_blocks_[i].init(rng);
        }
        if (cfg.unshuffle_downsample) {
            reduce_block_.configure(cfg.slm_channels * cfg.s1 * cfg.s2, cfg.channels);
        } else {
            strided_block_.configure(cfg.slm_channels, cfg.slm_channels, cfg.s1, cfg.s2);
            strided_block_.init(rng);
            reduce_block_.configure(cfg.slm_channels, cfg.channels);
        }
        reduce_block_.init(rng);
    }

    fpa_blocks_.resize(cfg.fpa_layers);
    for (int i = 0; i < cfg.fpa_layers; ++i) {
        fpa_blocks_[i].configure(i == 0 ? 1 : cfg.channels, cfg.channels);
        fpa_blocks_[i].init(rng);
    }

    fusion_blocks_.resize(cfg.fusion_layers);
    for (int i = 0; i < cfg.fusion_layers; ++i) {
        fusion_blocks_[i].configure(i == 0 ? cfg.latent_dim() : cfg.channels, cfg.channels);
        fusion_blocks_[i].init(rng);
    }

    // Zero-initialized output conv: the network starts as the identity on y,
    // so the residual path is the exact starting point of training.
    final_conv_.configure(cfg.channels, 1);
    final_conv_.init_zero();
}

Tensor4 CalibNet::forward(const Tensor4& masks, const Tensor4& ys, const Tensor4& bins,
                          bool train) {
    if (bins.c != kRadiusBins || bins.h != 1 || bins.w != 1)
        throw std::invalid_argument("CalibNet: bins must be (B, 9, 1, 1)");
    if (ys.n != bins.n || (cfg_.slm_coding && masks.n != ys.n))
        throw std::invalid_argument("CalibNet: batch size mismatch");

    Tensor4 lat = latent_guard_.forward(mlp2_.forward(mlp_act_.forward(mlp1_.forward(bins))));

    Tensor4 fused;
    if (cfg_.slm_coding) {
        Tensor4 t = masks;
        for (auto& blk : slm_blocks_) t = blk.forward(t, train);
        if (cfg_.unshuffle_downsample) {
            cached_pre_unshuffle_ = t;
            t = pixel_unshuffle(t, cfg_.s1, cfg_.s2);
        } else {
            t = strided_block_.forward(t, train);
        }
        Tensor4 lam_hat = reduce_block_.forward(t, train);

        Tensor4 u = ys;
        for (auto& blk : fpa_blocks_) u = blk.forward(u, train);
        fused = concat_channels(u, lam_hat);
    } else {
        Tensor4 u = ys;
        for (auto& blk : fpa_blocks_) u = blk.forward(u, train);
        fused = u;
    }

    cached_dc_ = fused;
    cached_lat_ = lat;
    Tensor4 f = divide_by_latent(fused, lat);
    for (auto& blk : fusion_blocks_) f = blk.forward(f, train);
    Tensor4 out = final_conv_.forward(f);

    if (!out.same_shape(ys)) throw std::runtime_error("CalibNet: output shape mismatch");
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += ys.v[i];
    return out;
}

void CalibNet::backward(const Tensor4& grad_out) {
    Tensor4 g = final_conv_.backward(grad_out);
    for (auto it = fusion_blocks_.rbegin(); it != fusion_blocks_.rend(); ++it) g = it->backward(g);

    Tensor4 g_dc, g_lat;
    divide_by_latent_backward(g, cached_dc_, cached_lat_, g_dc, g_lat);

    Tensor4 g_lat2 = latent_guard_.backward(g_lat);
    mlp1_.backward(mlp_act_.backward(mlp2_.backward(g_lat2)));

    Tensor4 g_fpa;
    if (cfg_.slm_coding) {
        Tensor4 g_lam;
        split_channels(g_dc, cfg_.channels, g_fpa, g_lam);
        Tensor4 t = reduce_block_.backward(g_lam);
        if (cfg_.unshuffle_downsample) {
            t = pixel_shuffle(t, cfg_.s1, cfg_.s2);
        } else {
            t = strided_block_.backward(t);
        }
        for (auto it = slm_blocks_.rbegin(); it != slm_blocks_.rend(); ++it) t = it->backward(t);
    } else {
        g_fpa = g_dc;
    }
    for (auto it = fpa_blocks_.rbegin(); it != fpa_blocks_.rend(); ++it)
        g_fpa = it->backward(g_fpa);
}

Image CalibNet::correct(const Image& mask, const Image& y, int bin) {
    if (bin < 0 || bin >= kRadiusBins) throw std::invalid_argument("correct: bad bin");
    Tensor4 masks(1, 1, mask.rows, mask.cols);
    masks.v = mask.data;
    Tensor4 ys(1, 1, y.rows, y.cols);
    ys.v = y.data;
    Tensor4 bins(1, kRadiusBins, 1, 1);
    bins.v[bin] = 1.0;
    Tensor4 out = forward(masks, ys, bins, /*train=*/false);
    Image img(y.rows, y.cols);
    img.data = out.v;
    return img;
}

std::vector<Param*> CalibNet::parameters() {
    std::vector<Param*> out;
    out.push_back(&mlp1_.weight);
    out.push_back(&mlp1_.bias);
    out.push_back(&mlp2_.weight);
    out.push_back(&mlp2_.bias);
    if (cfg_.slm_coding) {
        for (auto& blk : slm_blocks_) blk.collect(out);
        if (!cfg_.unshuffle_downsample) strided_block_.collect(out);
        reduce_block_.collect(out);
    }
    for (auto& blk : fpa_blocks_) blk.collect(out);
    for (auto& blk : fusion_blocks_) blk.collect(out);
    out.push_back(&final_conv_.weight);
    out.push_back(&final_conv_.bias);
    return out;
}

std::vector<std::pair<std::string, Tensor4*>> CalibNet::named_tensors() {
    std::vector<std::pair<std::string, Tensor4*>> out;
    auto add_block = [&out](const std::string& prefix, ConvBlock& blk) {
        out.emplace_back(prefix + ".conv.weight", &blk.conv.weight.value);
        out.emplace_back(prefix + ".conv.bias", &blk.conv.bias.value);
        if (blk.use_bn) {
            out.emplace_back(prefix + ".bn.gamma", &blk.bn.gamma.value);
            out.emplace_back(prefix + ".bn.beta", &blk.bn.beta.value);
            out.emplace_back(prefix + ".bn.running_mean", &blk.bn.running_mean);
            out.emplace_back(prefix + ".bn.running_var", &blk.bn.running_var);
        }
    };
    out.emplace_back("mlp1.weight", &mlp1_.weight.value);
    out.emplace_back("mlp1.bias", &mlp1_.bias.value);
    out.emplace_back("mlp2.weight", &mlp2_.weight.value);
    out.emplace_back("mlp2.bias", &mlp2_.bias.value);
    if (cfg_.slm_coding) {
        for (size_t i = 0; i < slm_blocks_.size(); ++i)
            add_block("slm." + std::to_string(i), slm_blocks_[i]);
        if (!cfg_.unshuffle_downsample) add_block("slm_strided", strided_block_);
        add_block("reduce", reduce_block_);
    }
    for (size_t i = 0; i < fpa_blocks_.size(); ++i)
        add_block("fpa." + std::to_string(i), fpa_blocks_[i]);
    for (size_t i = 0; i < fusion_blocks_.size(); ++i)
        add_block("fusion." + std::to_string(i), fusion_blocks_[i]);
    out.emplace_back("final.weight", &final_conv_.weight.value);
    out.emplace_back("final.bias", &final_conv_.bias.value);
    return out;
}

void CalibNet::zero_grad() {
    for (Param* p : parameters()) p->zero_grad();
}

void CalibNet::save(const std::string& dir) const {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    auto tensors = const_cast<CalibNet*>(this)->named_tensors();

    std::ofstream mf(fs::path(dir) / "manifest.txt");
    if (!mf) throw std::runtime_error("CalibNet::save: cannot write manifest");
    mf << "format = cfpa-checkpoint-v1\n";
    mf << "s1 = " << cfg_.s1 << "\n";
    mf << "s2 = " << cfg_.s2 << "\n";
    mf << "fpa_layers = " << cfg_.fpa_layers << "\n";
    mf << "slm_layers = " << cfg_.slm_layers << "\n";
    mf << "fusion_layers = " << cfg_.fusion_layers << "\n";
    mf << "channels = " << cfg_.channels << "\n";
    mf << "slm_channels = " << cfg_.slm_channels << "\n";
    mf << "mlp_hidden = " << cfg_.mlp_hidden << "\n";
    mf << "slm_coding = " << (cfg_.slm_coding ? 1 : 0) << "\n";
    mf << "unshuffle_downsample = " << (cfg_.unshuffle_downsample ? 1 : 0) << "\n";
    size_t offset = 0;
    for (auto& [name, t] : tensors) {
        mf << "tensor " << name << " " << t->n << " " << t->c << " " << t->h << " " << t->w << " "
           << offset << "\n";
        offset += t->size();
    }

    TensorContainer payload;
    payload.dtype = TensorContainer::DType::F64;
    payload.dims = {static_cast<uint32_t>(offset)};
    payload.f64.reserve(offset);
    for (auto& [name, t] : tensors) payload.f64.insert(payload.f64.end(), t->v.begin(), t->v.end());
    write_tensor((fs::path(dir) / "params.cfpa").string(), payload);
}

CalibNet CalibNet::load(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream mf(fs::path(dir) / "manifest.txt");
    if (!mf) throw std::runtime_error("CalibNet::load: cannot open manifest in " + dir);

    CalibNetConfig cfg;
    struct Entry {
        std::string name;
        int n, c, h, w;
        size_t offset;
    };
    std::vector<Entry> entries;
    std::string line;
    std::map<std::string, std::string> kv;
    while (std::getline(mf, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string first;
        ss >> first;
        if (first == "tensor") {
            Entry e;
            ss >> e.name >> e.n >> e.c >> e.h >> e.w >> e.offset;
            entries.push_back(e);
        } else {
            std::string eq, value;
            ss >> eq >> value;
            kv[first] = value;
        }
    }
    if (kv["format"] != "cfpa-checkpoint-v1")
        throw std::runtime_error("CalibNet::load: unknown checkpoint format");
    cfg.s1 = std::stoi(kv.at("s1"));
    cfg.s2 = std::stoi(kv.at("s2"));
    cfg.fpa_layers = std::stoi(kv.at("fpa_layers"));
    cfg.slm_layers = std::stoi(kv.at("slm_layers"));
    cfg.fusion_layers = std::stoi(kv.at("fusion_layers"));
    cfg.channels = std::stoi(kv.at("channels"));
    cfg.slm_channels = std::stoi(kv.at("slm_channels"));
    cfg.mlp_hidden = std::stoi(kv.at("mlp_hidden"));
    cfg.slm_coding = std::stoi(kv.at("slm_coding")) != 0;
    cfg.unshuffle_downsample = std::stoi(kv.at("unshuffle_downsample")) != 0;

    CalibNet net(cfg, /*init_seed=*/0);
    TensorContainer payload = read_tensor((fs::path(dir) / "params.cfpa").string());
    auto tensors = net.named_tensors();
    if (tensors.size() != entries.size())
        throw std::runtime_error("CalibNet::load: tensor count mismatch");
    for (size_t i = 0; i < tensors.size(); ++i) {
        auto& [name, t] = tensors[i];
        const Entry& e = entries[i];
        if (name != e.name || t->n != e.n || t->c != e.c || t->h != e.h || t->w != e.w)
            throw std::runtime_error("CalibNet::load: tensor layout mismatch at " + e.name);
        if (e.offset + t->size() > payload.f64.size())
            throw std::runtime_error("CalibNet::load: payload too short");
        std::copy(payload.f64.begin() + static_cast<long>(e.offset),
                  payload.f64.begin() + static_cast<long>(e.offset + t->size()), t->v.begin());
    }
    return net;
}

namespace {

struct Batch {
    Tensor4 masks, ys, bins, targets;
};

Batch assemble_batch(const std::vector<CalibSample>& set, const std::vector<int>& idx, size_t lo,
                     size_t hi) {
    const int b = static_cast<int>(hi - lo);
    const CalibSample& first = set[idx[lo]];
    Batch out;
    out.masks = Tensor4(b, 1, first.mask.rows, first.mask.cols);
    out.ys = Tensor4(b, 1, first.y.rows, first.y.cols);
    out.bins = Tensor4(b, kRadiusBins, 1, 1);
    out.targets = Tensor4(b, 1, first.target.rows, first.target.cols);
    for (size_t p = lo; p < hi; ++p) {
        const CalibSample& s = set[idx[p]];
        const int i = static_cast<int>(p - lo);
        if (!s.mask.same_shape(first.mask) || !s.y.same_shape(first.y))
            throw std::invalid_argument("train_calib: samples have inconsistent shapes");
        std::copy(s.mask.data.begin(), s.mask.data.end(),
                  out.masks.v.begin() + static_cast<long>(i * s.mask.size()));
        std::copy(s.y.data.begin(), s.y.data.end(),
                  out.ys.v.begin() + static_cast<long>(i * s.y.size()));
        std::copy(s.target.data.begin(), s.target.data.end(),
                  out.targets.v.begin() + static_cast<long>(i * s.target.size()));
        out.bins.at(i, s.bin, 0, 0) = 1.0;
    }
    return out;
}

double eval_l1(CalibNet& net, const std::vector<CalibSample>& set, int batch_size) {
    std::vector<int> idx(set.size());
    std::iota(idx.begin(), idx.end(), 0);
    double total = 0.0;
    size_t count = 0;
    for (size_t lo = 0; lo < set.size(); lo += batch_size) {
        const size_t hi = std::min(set.size(), lo + batch_size);
        Batch b = assemble_batch(set, idx, lo, hi);
        Tensor4 out = net.forward(b.masks, b.ys, b.bins, /*train=*/false);
        total += l1_loss(out, b.targets) * static_cast<double>(out.size());
        count += out.size();
    }
    return total / static_cast<double>(count);
}

}  // namespace

CalibNet train_calib(const CalibNetConfig& cfg, const std::vector<CalibSample>& train_set,
                     const std::vector<CalibSample>& val_set, const TrainHyper& hyper,
                     TrainResult* result) {
    if (train_set.empty()) throw std::invalid_argument("train_calib: empty training set");
    if (hyper.epochs < 1 || hyper.batch_size < 1)
        throw std::invalid_argument("train_calib: bad hyperparameters");

    CalibNet net(cfg, hyper.seed);
    auto params = net.parameters();
    Adam adam;
    adam.lr = hyper.lr;
    adam.init(params);

    Rng shuffle_rng(derive_seed(hyper.seed, 0x5F01));
    std::ofstream log;
    if (!hyper.log_path.empty()) {
        log.open(hyper.log_path);
        if (!log) throw std::runtime_error("train_calib: cannot open log " + hyper.log_path);
        log << "epoch\ttrain_l1\tval_l1\tlr\n";
    }

    std::vector<int> idx(train_set.size());
    std::iota(idx.begin(), idx.end(), 0);

    double best_val = std::numeric_limits<double>::infinity();
    int best_epoch = -1;
    std::vector<std::vector<double>> best_state;

    auto snapshot = [&net, &best_state]() {
        best_state.clear();
        for (auto& [name, t] : net.named_tensors()) best_state.push_back(t->v);
    };

    for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
        shuffle_rng.shuffle(idx);
        double train_total = 0.0;
        size_t train_count = 0;
        for (size_t lo = 0; lo < idx.size(); lo += hyper.batch_size) {
            const size_t hi = std::min(idx.size(), lo + hyper.batch_size);
            Batch b = assemble_batch(train_set, idx, lo, hi);
            net.zero_grad();
            Tensor4 out = net.forward(b.masks, b.ys, b.bins, /*train=*/true);
            const double loss = l1_loss(out, b.targets);
            if (!std::isfinite(loss))
                throw std::runtime_error("train_calib: non-finite loss at epoch " +
                                         std::to_string(epoch) + ", batch offset " +
                                         std::to_string(lo));
            net.backward(l1_loss_grad(out, b.targets));
            adam.step(params);
            train_total += loss * static_cast<double>(out.size());
            train_count += out.size();
        }
        const double lr_this_epoch = adam.lr;
        adam.epoch_end();

        const double train_l1 = train_total / static_cast<double>(train_count);
        const double val_l1 =
            val_set.empty() ? train_l1 : eval_l1(net, val_set, hyper.batch_size);
        if (log) {
            log << epoch << "\t" << train_l1 << "\t" << val_l1 << "\t" << lr_this_epoch << "\n";
            log.flush();
        }
        if (result) result->history.push_back({epoch, train_l1, val_l1, lr_this_epoch});
        if (val_l1 < best_val) {
            best_val = val_l1;
            best_epoch = epoch;
            snapshot();
        }
    }

    // Restore the best-validation parameters.
    if (!best_state.empty()) {
        auto tensors = net.named_tensors();
        for (size_t i = 0; i < tensors.size(); ++i) tensors[i].second->v = best_state[i];
    }
    if (result) {
        result->best_val_l1 = best_val;
        result->best_epoch = best_epoch;
    }
    return net;
}

Psf lr_domain_psf(const Psf& hr_psf, const SrFactor& sr) {
    // Square LR kernel large enough to cover the HR support on both axes.
    int lr_size = std::max((hr_psf.size + sr.s1 - 1) / sr.s1, (hr_psf.size + sr.s2 - 1) / sr.s2);
    if (lr_size % 2 == 0) ++lr_size;
    Psf out;
    out.size = lr_size;
    out.radius = hr_psf.radius;
    out.kernel.assign(static_cast<size_t>(lr_size) * lr_size, 0.0);

    const int hc = hr_psf.center();
    const int lc = lr_size / 2;
    double sum = 0.0;
    for (int i = 0; i < lr_size; ++i) {
        for (int j = 0; j < lr_size; ++j) {
            const int base_r = hc + (i - lc) * sr.s1;
            const int base_c = hc + (j - lc) * sr.s2;
            double acc = 0.0;
            for (int a = -(sr.s1 - 1) / 2; a <= sr.s1 / 2; ++a) {
                const int r = base_r + a;
                if (r < 0 || r >= hr_psf.size) continue;
                for (int b = -(sr.s2 - 1) / 2; b <= sr.s2 / 2; ++b) {
                    const int c = base_c + b;
                    if (c < 0 || c >= hr_psf.size) continue;
                    acc += hr_psf.at(r, c);
                }
            }
            const double v = acc / static_cast<double>(sr.s());
            out.kernel[static_cast<size_t>(i) * lr_size + j] = v;
            sum += v;
        }
    }
    for (auto& v : out.kernel) v /= sum;
    return out;
}

Image lucy_richardson(const Image& y, const Psf& psf_lr, int iters) {
    if (iters < 1) throw std::invalid_argument("lucy_richardson: iters must be >= 1");
    Image obs = y;
    for (auto& v : obs.data) v = std::max(0.0, v);

    // Mirrored kernel for the correlation step (identical for symmetric PSFs).
    Psf flipped = psf_lr;
    const int k = psf_lr.size;
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j)
            flipped.kernel[static_cast<size_t>(i) * k + j] = psf_lr.at(k - 1 - i, k - 1 - j);

    Image est = obs;
    Image ratio(y.rows, y.cols);
    for (int it = 0; it < iters; ++it) {
        Image blurred = convolve2d_circular(est, psf_lr);
        for (size_t i = 0; i < ratio.data.size(); ++i)
            ratio.data[i] = obs.data[i] / std::max(blurred.data[i], 1e-12);
        Image corr = convolve2d_circular(ratio, flipped);
        for (size_t i = 0; i < est.data.size(); ++i) est.data[i] *= corr.data[i];
    }
    return est;
}

CorrectionMethod correction_method_from_string(const std::string& name) {
    if (name == "raw") return CorrectionMethod::Raw;
    if (name == "lucy") return CorrectionMethod::Lucy;
    if (name == "calibfpa") return CorrectionMethod::CalibFpa;
    throw std::invalid_argument("unknown correction method: " + name);
}

std::string to_string(CorrectionMethod m) {
    switch (m) {
        case CorrectionMethod::Raw: return "raw";
        case CorrectionMethod::Lucy: return "lucy";
        case CorrectionMethod::CalibFpa: return "calibfpa";
    }
    return "?";
}

std::vector<Image> correct_measurements(CorrectionMethod method, const std::vector<Image>& ys,
                                        const CorrectionContext& ctx) {
    std::vector<Image> out;
    out.reserve(ys.size());
    switch (method) {
        case CorrectionMethod::Raw:
            out = ys;
            break;
        case CorrectionMethod::Lucy: {
            if (ctx.hr_psf == nullptr)
                throw std::invalid_argument("correct_measurements: lucy needs a psf");
            const Psf psf_lr = lr_domain_psf(*ctx.hr_psf, ctx.sr);
            for (const Image& y : ys) out.push_back(lucy_richardson(y, psf_lr, ctx.lucy_iters));
            break;
        }
        case CorrectionMethod::CalibFpa: {
            if (ctx.net == nullptr || ctx.masks == nullptr)
                throw std::invalid_argument("correct_measurements: calibfpa needs net and masks");
            if (ctx.masks->size() != ys.size())
                throw std::invalid_argument("correct_measurements: mask/measurement count");
            for (size_t i = 0; i < ys.size(); ++i)
                out.push_back(ctx.net->correct((*ctx.masks)[i], ys[i], ctx.bin));
            break;
        }
    }
    return out;
}

}  // namespace cfpa
