#ifndef CTSYNTH_CHECKPOINT_HPP
#define CTSYNTH_CHECKPOINT_HPP

#include <filesystem>
#include <map>
#include <string>

#include <torch/torch.h>

namespace ctsynth {

// Portable array file: magic "CTA1", uint32 rank, rank x int64 dims, then float32 data.
// Every field little-endian.
void write_array(const std::filesystem::path &path, const torch::Tensor &t);
torch::Tensor read_array(const std::filesystem::path &path);

// Checkpoint directory:
//   manifest.toml           architecture + training config and progress
//   arrays/<name>.f32       one array file per named tensor
//   rng.txt                 generator state (text)
struct CheckpointData {
    std::string manifest;  // structured text, written verbatim
    std::map<std::string, torch::Tensor> tensors;
    std::string rng_state;

    void save(const std::filesystem::path &dir) const;
    static CheckpointData load(const std::filesystem::path &dir);
};

// Named parameters of a module with a prefix, e.g. "generator.global.in.1.weight".
void collect_parameters(const torch::nn::Module &module, const std::string &prefix,
                        std::map<std::string, torch::Tensor> &out);
// Copies stored values into the module's parameters; missing names or shape mismatches throw.
void restore_parameters(torch::nn::Module &module, const std::string &prefix,
                        const std::map<std::string, torch::Tensor> &in);

}  // namespace ctsynth

#endif
