#ifndef CTSYNTH_LAYERS_HPP
#define CTSYNTH_LAYERS_HPP

#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

namespace ctsynth {

// Output dims of one documented layer (batch axis omitted).
struct LayerShape {
    std::string name;
    int64_t channels = 0;
    int64_t height = 0;
    int64_t width = 0;

    bool operator==(const LayerShape &) const = default;
};

std::ostream &operator<<(std::ostream &os, const LayerShape &s);

// An ordered list of named sequential stages registered on an owning module.
// Shapes can be traced stage by stage.
class StageList {
public:
    void add(torch::nn::Module &owner, std::string prefix, std::string name, torch::nn::Sequential stage);

    torch::Tensor run(torch::Tensor x, size_t begin, size_t end, std::vector<LayerShape> *trace = nullptr);
    torch::Tensor run(torch::Tensor x, std::vector<LayerShape> *trace = nullptr) {
        return run(std::move(x), 0, stages_.size(), trace);
    }
    size_t size() const { return stages_.size(); }
    size_t index_of(const std::string &name) const;

private:
    std::string prefix_;
    std::vector<std::pair<std::string, torch::nn::Sequential>> stages_;
};

struct ResnetBlockImpl : torch::nn::Module {
    explicit ResnetBlockImpl(int64_t channels);
    torch::Tensor forward(const torch::Tensor &x);

    torch::nn::Sequential body{nullptr};
};
TORCH_MODULE(ResnetBlock);

torch::nn::Conv2dOptions conv_options(int64_t in, int64_t out, int64_t kernel, int64_t stride, int64_t padding);

// N(0, 0.02) conv weights and zero conv biases, the usual init for this GAN family.
void init_gan_weights(torch::nn::Module &module);

int64_t count_parameters(const torch::nn::Module &module);

}  // namespace ctsynth

#endif
