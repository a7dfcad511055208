#include "ctsynth/layers.hpp"

#include <ostream>

#include "ctsynth/core.hpp"

namespace ctsynth {

namespace nn = torch::nn;

std::ostream &operator<<(std::ostream &os, const LayerShape &s) {
    return os << s.name << " " << s.channels << "x" << s.height << "x" << s.width;
}

void StageList::add(nn::Module &owner, std::string prefix, std::string name, nn::Sequential stage) {
    prefix_ = std::move(prefix);
    stages_.emplace_back(name, owner.register_module(name, std::move(stage)));
}

torch::Tensor StageList::run(torch::Tensor x, size_t begin, size_t end, std::vector<LayerShape> *trace) {
    for (size_t i = begin; i < end; ++i) {
        x = stages_[i].second->forward(x);
        if (trace) trace->push_back({prefix_ + "." + stages_[i].first, x.size(1), x.size(2), x.size(3)});
    }
    return x;
}

size_t StageList::index_of(const std::string &name) const {
    for (size_t i = 0; i < stages_.size(); ++i) {
        if (stages_[i].first == name) return i;
    }
    throw ShapeError("no stage named " + name);
}

ResnetBlockImpl::ResnetBlockImpl(int64_t channels) {
    body = register_module("body", nn::Sequential(nn::ReflectionPad2d(1), nn::Conv2d(conv_options(channels, channels, 3, 1, 0)),
                                                   nn::InstanceNorm2d(channels), nn::ReLU(), nn::ReflectionPad2d(1),
                                                   nn::Conv2d(conv_options(channels, channels, 3, 1, 0)),
                                                   nn::InstanceNorm2d(channels)));
}

torch::Tensor ResnetBlockImpl::forward(const torch::Tensor &x) { return x + body->forward(x); }

nn::Conv2dOptions conv_options(int64_t in, int64_t out, int64_t kernel, int64_t stride, int64_t padding) {
    return nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding);
}

void init_gan_weights(nn::Module &module) {
    torch::NoGradGuard no_grad;
    for (auto &m : module.modules(/*include_self=*/true)) {
        if (auto *conv = m->as<nn::Conv2d>()) {
            conv->weight.normal_(0.0, 0.02);
            if (conv->bias.defined()) conv->bias.zero_();
        } else if (auto *convt = m->as<nn::ConvTranspose2d>()) {
            convt->weight.normal_(0.0, 0.02);
            if (convt->bias.defined()) convt->bias.zero_();
        }
    }
}

int64_t count_parameters(const nn::Module &module) {
    int64_t n = 0;
    for (const auto &p : module.parameters()) n += p.numel();
    return n;
}

}  // namespace ctsynth
