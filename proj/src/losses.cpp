#include "ctsynth/losses.hpp"

#include <charconv>
#include <cmath>

#include "ctsynth/core.hpp"

namespace ctsynth {

namespace F = torch::nn::functional;

namespace {

constexpr size_t kTaps = 3;

torch::Tensor bce_logits(const torch::Tensor &logits, double target) {
    return F::binary_cross_entropy_with_logits(logits, torch::full_like(logits, target));
}

void check_grid_lists(const std::vector<torch::Tensor> &a, const std::vector<torch::Tensor> &b) {
    if (a.size() != b.size() || a.empty()) throw ShapeError("cgan loss: real and fake grid lists must match");
}

std::string fmt(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general);
    return ec == std::errc{} ? std::string(buf, end) : std::string("nan");
}

}  // namespace

bool LossReport::finite() const {
    return std::isfinite(g_adv) && std::isfinite(d_adv) && std::isfinite(dfm) && std::isfinite(total) &&
           std::isfinite(alpha) && std::isfinite(beta);
}

void write_log_header(std::ostream &os) { os << "step,g_adv,d_adv,dfm,total,alpha,beta,lr\n"; }

void write_log_row(std::ostream &os, const LossReport &r) {
    os << r.step << ',' << fmt(r.g_adv) << ',' << fmt(r.d_adv) << ',' << fmt(r.dfm) << ',' << fmt(r.total) << ','
       << fmt(r.alpha) << ',' << fmt(r.beta) << ',' << fmt(r.lr) << '\n';
}

torch::Tensor cgan_loss_d(const std::vector<torch::Tensor> &real_grids, const std::vector<torch::Tensor> &fake_grids) {
    check_grid_lists(real_grids, fake_grids);
    torch::Tensor loss;
    for (size_t i = 0; i < real_grids.size(); ++i) {
        auto term = 0.5 * (bce_logits(real_grids[i], 1.0) + bce_logits(fake_grids[i], 0.0));
        loss = loss.defined() ? loss + term : term;
    }
    return loss;
}

torch::Tensor cgan_loss_g(const std::vector<torch::Tensor> &fake_grids, GeneratorLossForm form) {
    if (fake_grids.empty()) throw ShapeError("cgan loss: no grids");
    torch::Tensor loss;
    for (const auto &g : fake_grids) {
        // log(1 - sigmoid(x)) = -BCE(x, 0)
        auto term = form == GeneratorLossForm::NonSaturating ? bce_logits(g, 1.0) : -bce_logits(g, 0.0);
        loss = loss.defined() ? loss + term : term;
    }
    return loss;
}

torch::Tensor feature_distance(const std::vector<torch::Tensor> &real_taps, const std::vector<torch::Tensor> &fake_taps) {
    if (real_taps.size() != fake_taps.size() || real_taps.empty()) {
        throw ShapeError("feature matching: tap lists differ in length");
    }
    torch::Tensor dist;
    for (size_t i = 0; i < real_taps.size(); ++i) {
        if (real_taps[i].sizes() != fake_taps[i].sizes()) throw ShapeError("feature matching: tap dims differ");
        // L1 norm over one sample divided by its element count N_i
        auto d = (real_taps[i].detach() - fake_taps[i]).abs().flatten(1).mean(1);
        dist = dist.defined() ? dist + d : d;
    }
    return dist;
}

torch::Tensor weighted_feature_matching(const std::vector<std::vector<torch::Tensor>> &real_taps,
                                        const std::vector<std::vector<torch::Tensor>> &fake_taps,
                                        const std::vector<torch::Tensor> &weights) {
    if (real_taps.size() != fake_taps.size() || real_taps.size() != weights.size() || real_taps.empty()) {
        throw ShapeError("feature matching: one weight and tap list per discriminator expected");
    }
    torch::Tensor per_sample;
    for (size_t d = 0; d < real_taps.size(); ++d) {
        auto term = weights[d] * feature_distance(real_taps[d], fake_taps[d]);
        per_sample = per_sample.defined() ? per_sample + term : term;
    }
    return per_sample.mean();
}

std::vector<torch::Tensor> dfm_weights(const torch::Tensor &beta, size_t n_discriminators) {
    if (n_discriminators == 0) throw ShapeError("dfm: no discriminators");
    if (n_discriminators == 1) return {torch::ones_like(beta)};
    std::vector<torch::Tensor> w{1.0 - beta};
    for (size_t i = 1; i < n_discriminators; ++i) w.push_back(beta / static_cast<double>(n_discriminators - 1));
    return w;
}

torch::Tensor dfm_loss(const std::vector<torch::Tensor> &real_taps_d1, const std::vector<torch::Tensor> &fake_taps_d1,
                       const std::vector<torch::Tensor> &real_taps_d2, const std::vector<torch::Tensor> &fake_taps_d2,
                       const torch::Tensor &beta) {
    for (const auto *list : {&real_taps_d1, &fake_taps_d1, &real_taps_d2, &fake_taps_d2}) {
        if (list->size() != kTaps) throw ShapeError("dfm_loss: expected exactly three taps per discriminator");
    }
    const auto batch = real_taps_d1.front().size(0);
    auto b = beta.dim() == 0 ? beta.expand({batch}) : beta;
    if (b.dim() != 1 || b.size(0) != batch) throw ShapeError("dfm_loss: beta must be a scalar or one value per sample");
    return weighted_feature_matching({real_taps_d1, real_taps_d2}, {fake_taps_d1, fake_taps_d2}, dfm_weights(b, 2));
}

torch::Tensor total_objective(const torch::Tensor &adv_g, const torch::Tensor &dfm, double lambda) {
    if (lambda < 0.0) throw ConfigError("train.lambda_fm", "must be non-negative");
    return adv_g + lambda * dfm;
}

}  // namespace ctsynth
