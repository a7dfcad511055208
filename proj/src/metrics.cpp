#include "ctsynth/metrics.hpp"

#include <torch/script.h>

#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <numeric>
#include <random>

namespace ctsynth {

namespace F = torch::nn::functional;
namespace nn = torch::nn;

namespace {

void check_same_dims(const CTImage &a, const CTImage &b, const char *who) {
    if (a.height() != b.height() || a.width() != b.width()) {
        throw ShapeError(std::string(who) + ": image dimensions differ");
    }
}

torch::Tensor as_double(const CTImage &img) { return img.values().to(torch::kDouble); }

}  // namespace

double mse(const CTImage &a, const CTImage &b) {
    check_same_dims(a, b, "mse");
    return (as_double(a) - as_double(b)).pow(2).mean().item<double>();
}

double rmse(const CTImage &a, const CTImage &b) { return std::sqrt(mse(a, b)); }

double psnr(const CTImage &a, const CTImage &b, double cap) {
    check_same_dims(a, b, "psnr");
    const double err = mse(a, b);
    if (err == 0.0) return cap;
    return std::min(cap, 10.0 * std::log10(1.0 / err));
}

torch::Tensor ssim_window(const SsimOptions &opts) {
    const int64_t n = opts.window;
    auto g = torch::empty({n}, torch::kDouble);
    auto acc = g.accessor<double, 1>();
    const double c = (n - 1) / 2.0;
    for (int64_t i = 0; i < n; ++i) acc[i] = std::exp(-0.5 * (i - c) * (i - c) / (opts.sigma * opts.sigma));
    g = g / g.sum();
    return torch::outer(g, g);
}

double ssim(const CTImage &a, const CTImage &b, const SsimOptions &opts) {
    check_same_dims(a, b, "ssim");
    if (a.height() < opts.window || a.width() < opts.window) throw ShapeError("ssim: image smaller than the window");
    auto w = ssim_window(opts).view({1, 1, opts.window, opts.window});
    auto x = as_double(a).view({1, 1, a.height(), a.width()});
    auto y = as_double(b).view({1, 1, b.height(), b.width()});
    auto filt = [&](const torch::Tensor &t) { return F::conv2d(t, w); };
    auto mx = filt(x);
    auto my = filt(y);
    auto sxx = filt(x * x) - mx * mx;
    auto syy = filt(y * y) - my * my;
    auto sxy = filt(x * y) - mx * my;
    const double c1 = std::pow(opts.k1 * opts.dynamic_range, 2);
    const double c2 = std::pow(opts.k2 * opts.dynamic_range, 2);
    auto map = ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
    return map.mean().item<double>();
}

torch::Tensor symmetric_sqrt(const torch::Tensor &m) {
    auto sym = 0.5 * (m + m.transpose(0, 1));
    auto [evals, evecs] = torch::linalg_eigh(sym);
    auto root = evals.clamp_min(0.0).sqrt();
    return evecs.matmul(torch::diag(root)).matmul(evecs.transpose(0, 1));
}

double fid(const torch::Tensor &feats_real, const torch::Tensor &feats_fake) {
    if (feats_real.dim() != 2 || feats_fake.dim() != 2 || feats_real.size(1) != feats_fake.size(1)) {
        throw ShapeError("fid: expected [n, d] embeddings with a shared dimension");
    }
    if (feats_real.size(0) < 2 || feats_fake.size(0) < 2) throw DataError("fid: need at least two vectors per set");
    auto xr = feats_real.to(torch::kDouble);
    auto xf = feats_fake.to(torch::kDouble);
    auto mu_r = xr.mean(0);
    auto mu_f = xf.mean(0);
    auto cov = [](const torch::Tensor &x, const torch::Tensor &mu) {
        auto c = x - mu;
        return c.transpose(0, 1).matmul(c) / static_cast<double>(x.size(0) - 1);
    };
    auto cov_r = cov(xr, mu_r);
    auto cov_f = cov(xf, mu_f);
    // tr sqrt(S_r S_f) = tr sqrt(S_r^1/2 S_f S_r^1/2), the latter symmetric PSD
    auto root_r = symmetric_sqrt(cov_r);
    auto inner = root_r.matmul(cov_f).matmul(root_r);
    auto evals = torch::linalg_eigvalsh(0.5 * (inner + inner.transpose(0, 1)));
    const double tr_sqrt = evals.clamp_min(0.0).sqrt().sum().item<double>();
    const double mean_term = (mu_r - mu_f).pow(2).sum().item<double>();
    const double value = mean_term + cov_r.trace().item<double>() + cov_f.trace().item<double>() - 2.0 * tr_sqrt;
    return std::max(0.0, value);
}

RandomConvExtractor::RandomConvExtractor(int64_t dim, uint64_t seed) : dim_(dim), seed_(seed) {
    if (dim < 1) throw ConfigError("eval.extractor", "embedding dim must be positive");
    net_ = nn::Sequential(nn::Conv2d(conv_opts(1, 16)), nn::ReLU(), nn::Conv2d(conv_opts(16, 32)), nn::ReLU(),
                          nn::Conv2d(conv_opts(32, dim)), nn::ReLU());
    std::mt19937_64 rng(seed);
    torch::NoGradGuard no_grad;
    for (auto &p : net_->named_parameters()) {
        auto &t = p.value();
        auto flat = torch::empty({t.numel()}, torch::kFloat);
        auto *d = flat.data_ptr<float>();
        if (p.key().find("bias") != std::string::npos) {
            std::uniform_real_distribution<float> u(-0.05F, 0.05F);
            for (int64_t i = 0; i < t.numel(); ++i) d[i] = u(rng);
        } else {
            const double fan_in = static_cast<double>(t.numel() / t.size(0));
            std::normal_distribution<float> normal(0.0F, static_cast<float>(std::sqrt(2.0 / fan_in)));
            for (int64_t i = 0; i < t.numel(); ++i) d[i] = normal(rng);
        }
        t.copy_(flat.view(t.sizes()));
    }
    net_->eval();
}

torch::nn::Conv2dOptions RandomConvExtractor::conv_opts(int64_t in, int64_t out) {
    return nn::Conv2dOptions(in, out, 3).stride(2).padding(1);
}

torch::Tensor RandomConvExtractor::embed(const torch::Tensor &images) {
    torch::NoGradGuard no_grad;
    if (images.dim() != 4 || images.size(1) != 1) throw ShapeError("extractor expects [B,1,H,W] images");
    return net_->forward(images.to(torch::kFloat)).mean({2, 3}).to(torch::kDouble);
}

std::string RandomConvExtractor::name() const {
    return "random:" + std::to_string(dim_) + ":" + std::to_string(seed_);
}

struct ScriptedExtractor::Impl {
    torch::jit::script::Module module;
};

ScriptedExtractor::ScriptedExtractor(const std::filesystem::path &path) : impl_(std::make_unique<Impl>()), path_(path) {
    try {
        impl_->module = torch::jit::load(path.string());
    } catch (const c10::Error &e) {
        throw ConfigError("eval.extractor", "cannot load TorchScript extractor " + path.string());
    }
    impl_->module.eval();
    dim_ = embed(torch::zeros({1, 1, 64, 64})).size(1);
}

ScriptedExtractor::~ScriptedExtractor() = default;

torch::Tensor ScriptedExtractor::embed(const torch::Tensor &images) {
    torch::NoGradGuard no_grad;
    auto out = impl_->module.forward({images.to(torch::kFloat)}).toTensor();
    return out.flatten(1).to(torch::kDouble);
}

std::unique_ptr<FeatureExtractor> make_extractor(const std::string &spec) {
    if (spec.rfind("torchscript:", 0) == 0) return std::make_unique<ScriptedExtractor>(spec.substr(12));
    if (spec == "random" || spec.rfind("random:", 0) == 0) {
        int64_t dim = 64;
        uint64_t seed = 2020;
        if (spec.size() > 7) {
            const auto rest = spec.substr(7);
            const auto colon = rest.find(':');
            try {
                dim = std::stoll(rest.substr(0, colon));
                if (colon != std::string::npos) seed = std::stoull(rest.substr(colon + 1));
            } catch (const std::exception &) {
                throw ConfigError("eval.extractor", "malformed extractor spec '" + spec + "'");
            }
        }
        return std::make_unique<RandomConvExtractor>(dim, seed);
    }
    throw ConfigError("eval.extractor", "unknown extractor '" + spec + "'");
}

torch::Tensor embed(FeatureExtractor &extractor, const std::vector<CTImage> &images) {
    if (images.empty()) return torch::empty({0, extractor.dim()}, torch::kDouble);
    std::vector<torch::Tensor> batch;
    batch.reserve(images.size());
    for (const auto &img : images) batch.push_back(img.values());
    return extractor.embed(torch::stack(batch).unsqueeze(1));
}

ConfusionCounts confusion(const torch::Tensor &pred, const torch::Tensor &truth) {
    if (pred.sizes() != truth.sizes()) throw ShapeError("segmentation metrics: mask dimensions differ");
    auto p = pred.to(torch::kBool);
    auto t = truth.to(torch::kBool);
    ConfusionCounts c;
    c.tp = p.logical_and(t).sum().item<int64_t>();
    c.fp = p.logical_and(t.logical_not()).sum().item<int64_t>();
    c.fn = p.logical_not().logical_and(t).sum().item<int64_t>();
    c.tn = p.logical_not().logical_and(t.logical_not()).sum().item<int64_t>();
    return c;
}

SegScores scores_from_counts(const ConfusionCounts &c) {
    auto ratio = [](int64_t num, int64_t den, bool both_empty) {
        if (den == 0) return both_empty ? 1.0 : 0.0;
        return static_cast<double>(num) / static_cast<double>(den);
    };
    SegScores s;
    s.dice = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, true);
    s.sensitivity = ratio(c.tp, c.tp + c.fn, c.fp == 0);  // no truth positives
    s.specificity = ratio(c.tn, c.tn + c.fp, c.fn == 0);  // no truth negatives
    return s;
}

SegScores dice_sen_spec(const torch::Tensor &pred, const torch::Tensor &truth) {
    return scores_from_counts(confusion(pred, truth));
}

double student_t_quantile(double p, double dof) {
    boost::math::students_t dist(dof);
    return boost::math::quantile(dist, p);
}

MetricReport fold_report(const std::vector<double> &values, int n_folds) {
    if (n_folds < 1) throw DataError("fold_report: need at least one fold");
    if (static_cast<size_t>(n_folds) > values.size()) throw DataError("fold_report: more folds than values");
    MetricReport r;
    r.values = values;
    const size_t n = values.size();
    const size_t base = n / n_folds;
    const size_t extra = n % n_folds;
    size_t pos = 0;
    for (int f = 0; f < n_folds; ++f) {
        const size_t len = base + (static_cast<size_t>(f) < extra ? 1 : 0);
        const double sum = std::accumulate(values.begin() + pos, values.begin() + pos + len, 0.0);
        r.fold_means.push_back(sum / static_cast<double>(len));
        pos += len;
    }
    const double k = static_cast<double>(n_folds);
    r.mean = std::accumulate(r.fold_means.begin(), r.fold_means.end(), 0.0) / k;
    const auto [lo, hi] = std::minmax_element(r.fold_means.begin(), r.fold_means.end());
    if (n_folds > 1 && *lo != *hi) {
        double ss = 0.0;
        for (double m : r.fold_means) ss += (m - r.mean) * (m - r.mean);
        const double sd = std::sqrt(ss / (k - 1.0));
        r.ci95 = student_t_quantile(0.975, k - 1.0) * sd / std::sqrt(k);
    }
    return r;
}

}  // namespace ctsynth
