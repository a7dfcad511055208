#ifndef CTSYNTH_CONFIG_HPP
#define CTSYNTH_CONFIG_HPP

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "ctsynth/phantom.hpp"
#include "ctsynth/seg_harness.hpp"
#include "ctsynth/trainer.hpp"

namespace ctsynth {

struct EvalConfig {
    std::string extractor = "random:64:2020";
    int folds = 10;
    int n_heldout = 0;  // held-out samples used for PSNR during training; 0 means the whole split
};

struct SegGridConfig {
    std::vector<std::string> modes{"add", "replace"};
    std::vector<double> ratios{0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
    uint64_t mix_seed = 5;
    int synth_count = 0;  // 0: enough for the largest ratio
};

// Everything one run needs. Sections in the file:
// [data] [phantom] [augment] [train] [generator] [discriminator] [eval] [seg]
struct RunConfig {
    DatasetPlan data{};
    std::string data_manifest;  // optional PNG-pair manifest replacing the phantom training split
    TrainConfig train{};
    EvalConfig eval{};
    SegTrainConfig seg{};
    SegGridConfig seg_grid{};

    // Syncs derived fields (dataset size from the generator resolution) and checks ranges.
    // Errors name the offending field as section.key.
    void validate();
};

RunConfig parse_run_config(const std::string &text, const std::string &source = "config");
RunConfig load_run_config(const std::filesystem::path &path);

// Every field, in a fixed order, so the output parses back to an equal config.
std::string to_toml(const RunConfig &cfg);

// "section.key=value", value in TOML syntax (bare words are taken as strings).
void apply_override(RunConfig &cfg, const std::string &assignment);

std::vector<std::string> config_field_names();

// The [train], [generator] and [discriminator] sections alone.
std::string train_config_to_toml(const TrainConfig &cfg);
TrainConfig train_config_from_toml(const std::string &text, const std::string &source = "config");

// (epoch, step) from a checkpoint manifest's [progress] section.
std::pair<int, int64_t> checkpoint_progress(const std::string &manifest);

std::vector<MixSpec> mix_grid(const RunConfig &cfg);

}  // namespace ctsynth

#endif
