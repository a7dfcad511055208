// Independent scalar reference implementations used by the unit and acceptance tests.
#ifndef CTSYNTH_TESTS_ORACLES_HPP
#define CTSYNTH_TESTS_ORACLES_HPP

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <torch/torch.h>

#include "ctsynth/core.hpp"

namespace oracle {

inline std::vector<double> pixels(const ctsynth::CTImage &img) {
    auto t = img.values().to(torch::kDouble).contiguous();
    return std::vector<double>(t.data_ptr<double>(), t.data_ptr<double>() + t.numel());
}

inline double mse(const ctsynth::CTImage &a, const ctsynth::CTImage &b) {
    auto x = pixels(a), y = pixels(b);
    double s = 0.0;
    for (size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
    return s / static_cast<double>(x.size());
}

inline double rmse(const ctsynth::CTImage &a, const ctsynth::CTImage &b) { return std::sqrt(oracle::mse(a, b)); }

inline double psnr(const ctsynth::CTImage &a, const ctsynth::CTImage &b) {
    const double m = oracle::mse(a, b);
    return m == 0.0 ? 100.0 : 10.0 * std::log10(1.0 / m);
}

// Sliding-window SSIM with an 11x11 Gaussian (sigma 1.5), every fully contained window.
inline double ssim(const ctsynth::CTImage &a, const ctsynth::CTImage &b, int win = 11, double sigma = 1.5) {
    const int h = static_cast<int>(a.height()), w = static_cast<int>(a.width());
    auto x = pixels(a), y = pixels(b);
    std::vector<double> g(win * win);
    double gsum = 0.0;
    const double c = (win - 1) / 2.0;
    for (int i = 0; i < win; ++i) {
        for (int j = 0; j < win; ++j) {
            g[i * win + j] = std::exp(-((i - c) * (i - c) + (j - c) * (j - c)) / (2.0 * sigma * sigma));
            gsum += g[i * win + j];
        }
    }
    for (auto &v : g) v /= gsum;
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double total = 0.0;
    int count = 0;
    for (int r = 0; r + win <= h; ++r) {
        for (int q = 0; q + win <= w; ++q) {
            double mx = 0, my = 0;
            for (int i = 0; i < win; ++i) {
                for (int j = 0; j < win; ++j) {
                    const double k = g[i * win + j];
                    mx += k * x[(r + i) * w + q + j];
                    my += k * y[(r + i) * w + q + j];
                }
            }
            double vx = 0, vy = 0, cxy = 0;
            for (int i = 0; i < win; ++i) {
                for (int j = 0; j < win; ++j) {
                    const double k = g[i * win + j];
                    const double dx = x[(r + i) * w + q + j] - mx, dy = y[(r + i) * w + q + j] - my;
                    vx += k * dx * dx;
                    vy += k * dy * dy;
                    cxy += k * dx * dy;
                }
            }
            total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            ++count;
        }
    }
    return total / count;
}

struct Counts {
    double tp = 0, fp = 0, fn = 0, tn = 0;
};

inline Counts count(const torch::Tensor &pred, const torch::Tensor &truth) {
    auto p = pred.to(torch::kInt).contiguous().view(-1);
    auto t = truth.to(torch::kInt).contiguous().view(-1);
    Counts c;
    for (int64_t i = 0; i < p.numel(); ++i) {
        const bool pi = p[i].item<int>() != 0, ti = t[i].item<int>() != 0;
        if (pi && ti) c.tp++;
        else if (pi) c.fp++;
        else if (ti) c.fn++;
        else c.tn++;
    }
    return c;
}

inline double dice(const Counts &c) { return 2 * c.tp + c.fp + c.fn == 0 ? 1.0 : 2 * c.tp / (2 * c.tp + c.fp + c.fn); }
inline double sen(const Counts &c) { return c.tp + c.fn == 0 ? (c.fp == 0 ? 1.0 : 0.0) : c.tp / (c.tp + c.fn); }
inline double spec(const Counts &c) { return c.tn + c.fp == 0 ? (c.fn == 0 ? 1.0 : 0.0) : c.tn / (c.tn + c.fp); }

// Mean binary cross-entropy of logits against a constant target, one element at a time.
inline double bce(const torch::Tensor &logits, double target) {
    auto l = logits.to(torch::kDouble).contiguous().view(-1);
    double s = 0.0;
    for (int64_t i = 0; i < l.numel(); ++i) {
        const double z = l[i].item<double>();
        const double p = 1.0 / (1.0 + std::exp(-z));
        s += -(target * std::log(p) + (1 - target) * std::log(1 - p));
    }
    return s / static_cast<double>(l.numel());
}

inline double fid_1d(double mu1, double s1, double mu2, double s2) { return (mu1 - mu2) * (mu1 - mu2) + (s1 - s2) * (s1 - s2); }

// Central difference of f along `direction` (one tensor per parameter).
inline double directional_fd(const std::function<double()> &f, std::vector<torch::Tensor> params,
                             const std::vector<torch::Tensor> &direction, double h) {
    torch::NoGradGuard ng;
    for (size_t i = 0; i < params.size(); ++i) params[i].add_(direction[i], h);
    const double up = f();
    for (size_t i = 0; i < params.size(); ++i) params[i].add_(direction[i], -2 * h);
    const double down = f();
    for (size_t i = 0; i < params.size(); ++i) params[i].add_(direction[i], h);
    return (up - down) / (2 * h);
}

// Analytic directional derivative vs finite difference along the normalized gradient.
// Returns the relative error.
inline double gradient_check(const std::function<torch::Tensor()> &loss, const std::vector<torch::Tensor> &params,
                             double h) {
    for (auto p : params) p.mutable_grad() = torch::Tensor();
    loss().backward();
    std::vector<torch::Tensor> dir;
    double norm2 = 0.0;
    for (const auto &p : params) {
        auto g = p.grad().defined() ? p.grad().detach().clone() : torch::zeros_like(p);
        norm2 += g.to(torch::kDouble).pow(2).sum().item<double>();
        dir.push_back(g);
    }
    const double norm = std::sqrt(norm2);
    if (norm == 0.0) return 0.0;
    for (auto &d : dir) d.div_(norm);
    const double analytic = norm;
    const double numeric = directional_fd([&] { return loss().item<double>(); }, params, dir, h);
    return std::abs(analytic - numeric) / std::max(std::abs(analytic), 1e-12);
}

// Same comparison along a random unit direction; error relative to the gradient norm.
inline double gradient_check_random(const std::function<torch::Tensor()> &loss, const std::vector<torch::Tensor> &params,
                                    double h, uint64_t seed) {
    for (auto p : params) p.mutable_grad() = torch::Tensor();
    loss().backward();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    std::vector<torch::Tensor> dir;
    double dnorm2 = 0.0, gnorm2 = 0.0, analytic = 0.0;
    for (const auto &p : params) {
        std::vector<double> buf(static_cast<size_t>(p.numel()));
        for (auto &v : buf) v = normal(rng);
        auto d = torch::from_blob(buf.data(), p.sizes(), torch::kDouble).clone().to(p.scalar_type());
        dnorm2 += d.to(torch::kDouble).pow(2).sum().item<double>();
        dir.push_back(d);
    }
    const double dnorm = std::sqrt(dnorm2);
    for (size_t i = 0; i < params.size(); ++i) {
        dir[i].div_(dnorm);
        if (!params[i].grad().defined()) continue;
        auto g = params[i].grad().to(torch::kDouble);
        gnorm2 += g.pow(2).sum().item<double>();
        analytic += (g * dir[i].to(torch::kDouble)).sum().item<double>();
    }
    const double numeric = directional_fd([&] { return loss().item<double>(); }, params, dir, h);
    return std::abs(analytic - numeric) / std::max(std::sqrt(gnorm2), 1e-12);
}

}  // namespace oracle

#endif
