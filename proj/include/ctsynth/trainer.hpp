#ifndef CTSYNTH_TRAINER_HPP
#define CTSYNTH_TRAINER_HPP

#include <array>
#include <filesystem>
#include <ostream>
#include <vector>

#include <torch/torch.h>

#include "ctsynth/checkpoint.hpp"
#include "ctsynth/core.hpp"
#include "ctsynth/discriminator.hpp"
#include "ctsynth/generator.hpp"
#include "ctsynth/losses.hpp"

namespace ctsynth {

// Who optimizes a weighting network (AlphaNet / BetaNet).
enum class WeightNetOwner {
    Generator,  // stepped with the generator objective
    Frozen,     // left at its initialization
};

struct TrainConfig {
    int epochs_total = 20;
    std::array<int, 3> stage_epochs{5, 5, 10};
    double lr = 2e-4;
    double adam_beta1 = 0.5;
    double adam_beta2 = 0.999;
    double lambda_fm = 10.0;
    int batch_size = 4;
    int steps_per_epoch = 0;  // 0: one pass over the training set
    uint64_t seed = 7;
    bool deterministic = true;
    bool supervise_g1_joint = true;
    GeneratorLossForm g_loss = GeneratorLossForm::NonSaturating;
    WeightNetOwner alpha_owner = WeightNetOwner::Generator;
    WeightNetOwner beta_owner = WeightNetOwner::Generator;

    GeneratorConfig generator{};
    DiscriminatorConfig discriminator{};

    // Also copies the generator's base resolution into the discriminator config.
    void validate();
};

enum class Stage { Global = 1, Local = 2, Joint = 3 };

// Constant for the first half of the epochs, then linear decay reaching zero at the last epoch.
double lr_at(int epoch, const TrainConfig &cfg);

Stage stage_of_epoch(int epoch, const TrainConfig &cfg);
int stage_begin(Stage s, const TrainConfig &cfg);
int stage_end(Stage s, const TrainConfig &cfg);

struct TrainProgress {
    int epoch = 0;     // next epoch to run
    int64_t step = 0;  // optimizer steps taken so far
};

class Trainer {
public:
    explicit Trainer(TrainConfig cfg);

    void set_data(const std::vector<PairedSample> &train);
    size_t data_size() const;

    // Runs the remaining epochs belonging to `stage`.
    std::vector<LossReport> run_stage(Stage stage);
    std::vector<LossReport> run_epochs(int count);
    std::vector<LossReport> run_all();

    // One discriminator step followed by one generator step on the given sample indices.
    LossReport train_step(Stage stage, const std::vector<int64_t> &batch, double lr);
    // The D half / G half separately, for isolation checks.
    double discriminator_step(Stage stage, const std::vector<int64_t> &batch, double lr);
    LossReport generator_step(Stage stage, const std::vector<int64_t> &batch, double lr);

    // Batch order for an epoch; a pure function of (seed, epoch).
    std::vector<std::vector<int64_t>> epoch_batches(int epoch) const;

    CheckpointData checkpoint() const;
    void restore(const CheckpointData &ckpt);
    void save(const std::filesystem::path &dir) const { checkpoint().save(dir); }
    static Trainer load(const std::filesystem::path &dir);

    void set_log(std::ostream *log) { log_ = log; }
    void set_diagnostics_dir(std::filesystem::path dir) { diagnostics_dir_ = std::move(dir); }

    const TrainConfig &config() const { return cfg_; }
    const TrainProgress &progress() const { return progress_; }
    Generator &generator() { return generator_; }
    MultiDiscriminator &discriminator() { return discriminator_; }
    const std::vector<LossReport> &history() const { return history_; }

    std::vector<std::pair<std::string, torch::Tensor>> generator_side_parameters() const;
    std::vector<std::pair<std::string, torch::Tensor>> discriminator_side_parameters() const;

private:
    // Maps and images at full, half and quarter resolution.
    struct Batch {
        std::vector<torch::Tensor> maps, images;
    };
    Batch gather(const std::vector<int64_t> &idx) const;
    size_t stage1_discriminator() const;
    torch::Tensor coarse_fake(const torch::Tensor &coarse, size_t disc) const;
    Stage effective(Stage s) const;
    void set_lr(double lr);
    void build_optimizers();
    void check_finite(const LossReport &r, const std::vector<int64_t> &batch);

    TrainConfig cfg_;
    Generator generator_{nullptr};
    MultiDiscriminator discriminator_{nullptr};
    std::unique_ptr<torch::optim::Adam> opt_g_;
    std::unique_ptr<torch::optim::Adam> opt_d_;
    std::vector<std::pair<std::string, torch::Tensor>> g_params_;
    std::vector<std::pair<std::string, torch::Tensor>> d_params_;

    std::vector<torch::Tensor> maps_, images_;
    std::vector<std::string> ids_;
    TrainProgress progress_;
    std::vector<LossReport> history_;
    std::ostream *log_ = nullptr;
    std::filesystem::path diagnostics_dir_;
};

// Stage entry points: each runs its stage's epochs on `data` starting from `start` (or a
// fresh initialization) and returns the resulting checkpoint.
CheckpointData train_stage1(const std::vector<PairedSample> &data, const TrainConfig &cfg);
CheckpointData train_stage2(const std::vector<PairedSample> &data, const TrainConfig &cfg, const CheckpointData *start = nullptr);
CheckpointData train_stage3_joint(const std::vector<PairedSample> &data, const TrainConfig &cfg, const CheckpointData *start = nullptr);

}  // namespace ctsynth

#endif
