#ifndef CTSYNTH_LOSSES_HPP
#define CTSYNTH_LOSSES_HPP

#include <ostream>
#include <vector>

#include <torch/torch.h>

namespace ctsynth {

enum class GeneratorLossForm {
    NonSaturating,  // BCE of fake logits against target 1
    Saturating,     // the literal minimax form, E[log(1 - D(m, G(m)))]
};

struct LossReport {
    int64_t step = 0;
    double g_adv = 0.0;
    double d_adv = 0.0;
    double dfm = 0.0;
    double total = 0.0;
    double alpha = 1.0;
    double beta = 0.0;
    double lr = 0.0;

    bool finite() const;
    bool operator==(const LossReport &) const = default;
};

void write_log_header(std::ostream &os);
void write_log_row(std::ostream &os, const LossReport &r);

// Sum over discriminators of 0.5 * (mean BCE(real, 1) + mean BCE(fake, 0)).
torch::Tensor cgan_loss_d(const std::vector<torch::Tensor> &real_grids, const std::vector<torch::Tensor> &fake_grids);

// Sum over discriminators of the generator-side adversarial term.
torch::Tensor cgan_loss_g(const std::vector<torch::Tensor> &fake_grids,
                          GeneratorLossForm form = GeneratorLossForm::NonSaturating);

// sum_i (1/N_i) * || real_i - fake_i ||_1 for each sample, where N_i is the per-sample
// element count of layer i. Returns a [B] tensor. Real taps are treated as constants.
torch::Tensor feature_distance(const std::vector<torch::Tensor> &real_taps, const std::vector<torch::Tensor> &fake_taps);

// Dynamic feature matching over the two discriminators (three taps each):
//   mean_b sum_i [ beta_b/N_i |D2^i(real) - D2^i(fake)|_1 + (1-beta_b)/N_i |D1^i(real) - D1^i(fake)|_1 ]
// beta is a scalar or a [B] tensor.
torch::Tensor dfm_loss(const std::vector<torch::Tensor> &real_taps_d1, const std::vector<torch::Tensor> &fake_taps_d1,
                       const std::vector<torch::Tensor> &real_taps_d2, const std::vector<torch::Tensor> &fake_taps_d2,
                       const torch::Tensor &beta);

// General form for any number of discriminators: per-discriminator weights ([B] each),
// distances over taps of each discriminator.
torch::Tensor weighted_feature_matching(const std::vector<std::vector<torch::Tensor>> &real_taps,
                                        const std::vector<std::vector<torch::Tensor>> &fake_taps,
                                        const std::vector<torch::Tensor> &weights);

// Per-discriminator DFM weights: D1 gets (1 - beta), coarser ones share beta equally.
std::vector<torch::Tensor> dfm_weights(const torch::Tensor &beta, size_t n_discriminators);

torch::Tensor total_objective(const torch::Tensor &adv_g, const torch::Tensor &dfm, double lambda);

}  // namespace ctsynth

#endif
