#ifndef CTSYNTH_SEG_HARNESS_HPP
#define CTSYNTH_SEG_HARNESS_HPP

#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "ctsynth/core.hpp"
#include "ctsynth/generator.hpp"
#include "ctsynth/layers.hpp"
#include "ctsynth/metrics.hpp"
#include "ctsynth/phantom.hpp"

namespace ctsynth {

enum class MixMode {
    Replace,  // total count fixed, a fraction of real samples swapped for synthetic ones
    Add,      // all real samples kept, synthetic ones appended
};
std::string mix_mode_name(MixMode m);
MixMode parse_mix_mode(const std::string &s);

struct MixSpec {
    MixMode mode = MixMode::Add;
    double ratio = 0.0;  // one of 0.0, 0.1, ..., 0.5
    std::string source = "ctsynth";
    uint64_t seed = 0;

    void validate() const;
};

// Plain U-Net: two 3x3 conv + ReLU per level, max-pool down, transposed-conv up, skip
// concatenation, 1x1 head with one logit per class.
struct UNetImpl : torch::nn::Module {
    UNetImpl(int64_t base_channels, int depth);
    torch::Tensor forward(const torch::Tensor &x, std::vector<LayerShape> *trace = nullptr);

    int64_t base_channels;
    int depth;
    std::vector<torch::nn::Sequential> down;
    std::vector<torch::nn::ConvTranspose2d> up;
    std::vector<torch::nn::Sequential> merge;
    torch::nn::Conv2d head{nullptr};
};
TORCH_MODULE(UNet);

UNet build_unet(int64_t base_channels, int depth);
std::vector<LayerShape> unet_architecture(int64_t base_channels, int depth, int64_t resolution);

// Real samples first (in pool order), then synthetic ones. Selection is seeded by spec.seed.
std::vector<PairedSample> mix_dataset(const std::vector<PairedSample> &real_pool,
                                      const std::vector<PairedSample> &synth_pool, const MixSpec &spec);
// Number of synthetic samples mix_dataset draws for a real pool of size n.
int64_t synthetic_count(int64_t n_real, const MixSpec &spec);

struct SegTrainConfig {
    int64_t base_channels = 32;
    int depth = 4;
    int epochs = 4;
    int steps_per_epoch = 0;  // 0: one pass over the mixed set
    int batch_size = 4;
    double lr = 2e-4;
    double adam_beta1 = 0.5;
    double adam_beta2 = 0.999;
    uint64_t seed = 11;
    bool deterministic = true;

    void validate() const;
};

// Cross-entropy training; returns the trained network and, optionally, per-step losses.
UNet train_unet(const std::vector<PairedSample> &train, const SegTrainConfig &cfg,
                std::vector<double> *losses = nullptr);

// Per-sample Dice/Sen/Spec for GGO, consolidation and their union.
struct FocusScores {
    SegScores ggo, consolidation, infection;
};
std::vector<FocusScores> evaluate_unet(UNet &net, const std::vector<PairedSample> &eval_set);

// Metric keys in table order: ggo_dice, ggo_sen, ggo_spec, consolidation_*, infection_*.
const std::vector<std::string> &seg_metric_names();

struct SegCell {
    MixSpec spec;
    std::map<std::string, MetricReport> metrics;
    std::vector<double> losses;
    std::string error;  // empty when the cell succeeded
};

struct SegExperiment {
    std::vector<MixSpec> grid;
    SegTrainConfig train;
    int folds = 10;
};

// Real pool, synthetic pool and evaluation set. The segmentation experiments train on the
// synthesis test split and are evaluated on the synthesis training split.
struct SegData {
    std::vector<PairedSample> real_pool;
    std::vector<PairedSample> synth_pool;
    std::vector<PairedSample> eval_set;
};

// Synthetic pairs: freshly augmented copies of each real map, rendered by the generator and
// composited onto the equally augmented real image.
std::vector<PairedSample> synthetic_pool(const std::vector<PairedSample> &real, Generator &g,
                                         const AugmentConfig &augment, int64_t count, uint64_t seed);
SegData segmentation_data(const DatasetManifest &dataset, Generator &g, int64_t synth_count, uint64_t seed,
                          const SegmentationRoles &roles = {});

std::vector<SegCell> run_experiment(const SegExperiment &exp, const SegData &data);

// One row per cell: mode, ratio, nine "mean±ci" columns (percent), status.
void write_experiment_csv(std::ostream &os, const std::vector<SegCell> &cells);

}  // namespace ctsynth

#endif
