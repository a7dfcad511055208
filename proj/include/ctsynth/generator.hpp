#ifndef CTSYNTH_GENERATOR_HPP
#define CTSYNTH_GENERATOR_HPP

#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "ctsynth/core.hpp"
#include "ctsynth/layers.hpp"

namespace ctsynth {

// Batched activation tensor [B,C,H,W] with a provenance tag.
struct FeatureMap {
    torch::Tensor values;
    std::string tag;

    int64_t channels() const { return values.size(1); }
    int64_t height() const { return values.size(2); }
    int64_t width() const { return values.size(3); }
};

// What the DESUM weighting network looks at.
enum class AlphaInput {
    Concat,      // channel concatenation of F_local and F_global
    GlobalOnly,  // F_global alone
    LocalOnly,   // F_local alone
};

struct GeneratorConfig {
    int64_t base_resolution = 64;
    int64_t base_channels = 16;       // width of G1's first layer
    int64_t n_residual_blocks = 9;    // G1 bottleneck
    int64_t n_downsamples_g1 = 3;
    int64_t n_residual_blocks_local = 3;
    int64_t alpha_hidden = 32;

    bool use_desum = true;
    std::optional<double> fixed_alpha;
    bool zero_global_feature = false;  // feed zeros instead of F_global into DESUM
    int n_generators = 2;
    AlphaInput alpha_input = AlphaInput::Concat;

    void validate() const;

    // Resolution G1 runs at (base / 2 for the dual generator).
    int64_t global_resolution() const;
};

struct GlobalOutput {
    torch::Tensor image;    // [B,1,h,w] in [0,1]
    FeatureMap feature;     // last up-sampling activation, before the output head
};

struct GlobalGeneratorImpl : torch::nn::Module {
    GlobalGeneratorImpl(int64_t base_channels, int64_t n_downsamples, int64_t n_blocks);
    GlobalOutput forward(const torch::Tensor &onehot, std::vector<LayerShape> *trace = nullptr);

    StageList body;  // in, down*, res*, up*
    StageList head;  // out
};
TORCH_MODULE(GlobalGenerator);

// G2 (and the extra level of the three-generator ablation): one down-sampling step, a
// fusion point, residual blocks, one up-sampling step and an output head.
struct LocalEnhancerImpl : torch::nn::Module {
    LocalEnhancerImpl(std::string name, int64_t width, int64_t n_blocks);

    FeatureMap encode(const torch::Tensor &onehot, std::vector<LayerShape> *trace = nullptr);
    FeatureMap decode(const torch::Tensor &fused, std::vector<LayerShape> *trace = nullptr);
    torch::Tensor to_image(const FeatureMap &feature, std::vector<LayerShape> *trace = nullptr);

    std::string name;
    StageList encoder;
    StageList decoder;
    StageList head;
};
TORCH_MODULE(LocalEnhancer);

// Three conv layers and two fully-connected layers producing one weight in (0,1) per sample.
struct AlphaNetImpl : torch::nn::Module {
    AlphaNetImpl(int64_t in_channels, int64_t hidden);
    torch::Tensor forward(const torch::Tensor &x);

    torch::nn::Sequential trunk{nullptr};
    torch::nn::Sequential head{nullptr};
};
TORCH_MODULE(AlphaNet);

// F_out = alpha * F_local + (1 - alpha) * F_global.
FeatureMap desum(const FeatureMap &local, const FeatureMap &global, double alpha);
// Per-sample weights, alpha of shape [B].
FeatureMap desum(const FeatureMap &local, const FeatureMap &global, const torch::Tensor &alpha);

struct GeneratorOutput {
    torch::Tensor image;         // [B,1,base,base]
    torch::Tensor coarse_image;  // G1's image at its own resolution; undefined with one generator
    torch::Tensor alpha;         // [B], weight used by the finest DESUM (ones when it is bypassed)
    std::vector<torch::Tensor> alphas;
};

struct GeneratorImpl : torch::nn::Module {
    explicit GeneratorImpl(GeneratorConfig cfg);

    // G1 alone on a map at its native resolution.
    GlobalOutput g1_forward(const torch::Tensor &onehot_coarse);
    // G2 with a given global feature and fixed weight.
    torch::Tensor g2_forward(const torch::Tensor &onehot_full, const FeatureMap &global, double alpha);
    // G2 alone, as in its individual training stage.
    torch::Tensor local_forward(const torch::Tensor &onehot_full);
    torch::Tensor alpha_forward(size_t level, const FeatureMap &local, const FeatureMap &global);

    GeneratorOutput forward(const torch::Tensor &onehot_full, std::vector<LayerShape> *trace = nullptr);

    std::vector<torch::Tensor> g1_parameters() const;
    std::vector<torch::Tensor> g2_parameters() const;
    std::vector<torch::Tensor> alpha_parameters() const;

    const GeneratorConfig &config() const { return cfg; }

    GeneratorConfig cfg;
    GlobalGenerator global{nullptr};
    std::vector<LocalEnhancer> enhancers;
    std::vector<AlphaNet> alpha_nets;
};
TORCH_MODULE(Generator);

// Expected per-layer output dims for a configuration, derived from layer arithmetic alone.
std::vector<LayerShape> generator_architecture(const GeneratorConfig &cfg);

}  // namespace ctsynth

#endif
