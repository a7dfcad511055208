#ifndef CTSYNTH_DISCRIMINATOR_HPP
#define CTSYNTH_DISCRIMINATOR_HPP

#include <optional>
#include <vector>

#include <torch/torch.h>

#include "ctsynth/core.hpp"
#include "ctsynth/layers.hpp"

namespace ctsynth {

enum class Resolution { Full, Half, Quarter };

// Which discriminator's intermediate feature the beta network observes.
enum class BetaSource { D1, D2 };

struct DiscriminatorConfig {
    int64_t base_resolution = 64;
    int64_t base_channels = 16;
    int64_t n_layers = 3;  // strided blocks; 3 gives the 70x70 receptive field
    int n_discriminators = 2;
    std::optional<double> fixed_beta;
    bool use_dfm = true;
    int beta_tap = 2;  // i in D_1^i, 1-based
    BetaSource beta_source = BetaSource::D1;
    int64_t beta_hidden = 32;
    bool instance_norm = true;  // off gives strictly patch-local decisions

    void validate() const;
};

// Patch logits [B,1,h,w] plus the activations of the first three blocks.
struct DiscriminatorOutput {
    torch::Tensor grid;
    std::vector<torch::Tensor> taps;
};

// PatchGAN: 4x4 convs with strides 2,...,2,1 and padding 1, then a stride-1 logit head.
// No sigmoid; losses consume logits.
struct PatchDiscriminatorImpl : torch::nn::Module {
    PatchDiscriminatorImpl(std::string name, int64_t base_channels, int64_t n_layers, bool instance_norm = true);
    DiscriminatorOutput forward(const torch::Tensor &onehot, const torch::Tensor &image,
                                std::vector<LayerShape> *trace = nullptr);

    int64_t tap_channels(int tap) const;

    StageList blocks;
    std::vector<int64_t> channels;
};
TORCH_MODULE(PatchDiscriminator);

// Small conv trunk + pooled scalar head; one weight in (0,1) per sample.
struct BetaNetImpl : torch::nn::Module {
    BetaNetImpl(int64_t in_channels, int64_t hidden);
    torch::Tensor forward(const torch::Tensor &tap);

    torch::nn::Sequential trunk{nullptr};
    torch::nn::Linear head{nullptr};
};
TORCH_MODULE(BetaNet);

// D1 at full resolution, D2 at half resolution and, for the three-discriminator ablation,
// D3 at quarter resolution (with one fewer strided block so small inputs still give a grid).
struct MultiDiscriminatorImpl : torch::nn::Module {
    explicit MultiDiscriminatorImpl(DiscriminatorConfig cfg);

    // Callers pre-halve inputs for the half-resolution discriminator.
    DiscriminatorOutput d_forward(const torch::Tensor &onehot, const torch::Tensor &image, Resolution which);

    // Every discriminator on its own scale of the same full-resolution pair.
    std::vector<DiscriminatorOutput> forward_all(const torch::Tensor &onehot_full, const torch::Tensor &image_full);

    torch::Tensor beta_forward(const torch::Tensor &tap);

    std::vector<torch::Tensor> discriminator_parameters() const;
    std::vector<torch::Tensor> beta_parameters() const;

    int64_t expected_resolution(Resolution which) const;
    const DiscriminatorConfig &config() const { return cfg; }

    DiscriminatorConfig cfg;
    std::vector<PatchDiscriminator> discriminators;
    BetaNet beta_net{nullptr};
};
TORCH_MODULE(MultiDiscriminator);

// Decision-grid side length for an input side length, from the layer schedule alone.
int64_t patch_grid_size(int64_t input_size, int64_t n_layers);
// Receptive field of one decision-grid cell.
int64_t patch_receptive_field(int64_t n_layers);

std::vector<LayerShape> discriminator_architecture(const DiscriminatorConfig &cfg, Resolution which);

}  // namespace ctsynth

#endif
