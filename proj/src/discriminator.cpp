#include "ctsynth/discriminator.hpp"

namespace ctsynth {

namespace nn = torch::nn;

namespace {

constexpr int kTaps = 3;

nn::LeakyReLU leaky() { return nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)); }

int64_t layers_for(const DiscriminatorConfig &cfg, size_t index) {
    return index == 2 ? cfg.n_layers - 1 : cfg.n_layers;
}

const char *disc_name(size_t index) {
    static const char *names[] = {"d1", "d2", "d3"};
    return names[index];
}

}  // namespace

void DiscriminatorConfig::validate() const {
    if (n_discriminators < 1 || n_discriminators > 3) {
        throw ConfigError("discriminator.n_discriminators", "must be 1, 2 or 3");
    }
    if (fixed_beta && (*fixed_beta < 0.0 || *fixed_beta > 1.0)) {
        throw ConfigError("discriminator.fixed_beta", "must lie in [0,1]");
    }
    if (n_layers < 2) throw ConfigError("discriminator.n_layers", "must be at least 2");
    if (n_discriminators == 3 && n_layers < 3) throw ConfigError("discriminator.n_layers", "three discriminators need n_layers >= 3");
    if (beta_tap < 1 || beta_tap > kTaps) throw ConfigError("discriminator.beta_tap", "must be 1, 2 or 3");
    if (beta_source == BetaSource::D2 && n_discriminators < 2) {
        throw ConfigError("discriminator.beta_source", "D2 taps need at least two discriminators");
    }
    if (base_channels < 1) throw ConfigError("discriminator.base_channels", "must be positive");
    for (int i = 0; i < n_discriminators; ++i) {
        const int64_t res = base_resolution >> i;
        const int64_t layers = i == 2 ? n_layers - 1 : n_layers;
        if (patch_grid_size(res, layers) < 1) {
            throw ConfigError("generator.base_resolution",
                              std::string(disc_name(i)) + " input " + std::to_string(res) + " gives an empty decision grid");
        }
    }
}

int64_t patch_grid_size(int64_t n, int64_t n_layers) {
    // k=4, p=1: stride 2 gives floor((n-2)/2)+1, stride 1 gives n-1
    for (int64_t i = 0; i < n_layers; ++i) {
        if (n < 2) return 0;
        n = (n - 2) / 2 + 1;
    }
    return n - 2;  // one stride-1 block plus the stride-1 head
}

int64_t patch_receptive_field(int64_t n_layers) {
    // walk back from one output cell: r_in = (r_out - 1) * stride + kernel
    int64_t r = 1;
    r = (r - 1) * 1 + 4;  // head
    r = (r - 1) * 1 + 4;  // stride-1 block
    for (int64_t i = 0; i < n_layers; ++i) r = (r - 1) * 2 + 4;
    return r;
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(std::string name, int64_t ndf, int64_t n_layers, bool instance_norm) {
    auto block = [&](int64_t in, int64_t out, int64_t stride) {
        nn::Sequential s(nn::Conv2d(conv_options(in, out, 4, stride, 1)));
        if (instance_norm) s->push_back(nn::InstanceNorm2d(out));
        s->push_back(leaky());
        return s;
    };
    const int64_t in = kNumClasses + 1;
    blocks.add(*this, name, "block1", nn::Sequential(nn::Conv2d(conv_options(in, ndf, 4, 2, 1)), leaky()));
    channels.push_back(ndf);
    int64_t ch = ndf;
    for (int64_t i = 1; i < n_layers; ++i) {
        const int64_t next = std::min(ch * 2, ndf * 8);
        blocks.add(*this, name, "block" + std::to_string(i + 1),
                   block(ch, next, 2));
        channels.push_back(next);
        ch = next;
    }
    const int64_t next = std::min(ch * 2, ndf * 8);
    blocks.add(*this, name, "block" + std::to_string(n_layers + 1),
               block(ch, next, 1));
    channels.push_back(next);
    blocks.add(*this, name, "head", nn::Sequential(nn::Conv2d(conv_options(next, 1, 4, 1, 1))));
}

DiscriminatorOutput PatchDiscriminatorImpl::forward(const torch::Tensor &onehot, const torch::Tensor &image,
                                                    std::vector<LayerShape> *trace) {
    if (onehot.size(2) != image.size(2) || onehot.size(3) != image.size(3)) {
        throw ShapeError("discriminator: map and image dims differ");
    }
    auto x = torch::cat({onehot, image}, 1);
    DiscriminatorOutput out;
    for (size_t i = 0; i < blocks.size(); ++i) {
        x = blocks.run(x, i, i + 1, trace);
        if (out.taps.size() < kTaps && i + 1 < blocks.size()) out.taps.push_back(x);
    }
    out.grid = x;
    return out;
}

int64_t PatchDiscriminatorImpl::tap_channels(int tap) const { return channels.at(static_cast<size_t>(tap - 1)); }

BetaNetImpl::BetaNetImpl(int64_t in_channels, int64_t hidden) {
    trunk = register_module("trunk", nn::Sequential(nn::Conv2d(conv_options(in_channels, hidden, 3, 2, 1)), leaky(),
                                                     nn::Conv2d(conv_options(hidden, hidden, 3, 2, 1)), leaky()));
    head = register_module("head", nn::Linear(hidden, 1));
}

torch::Tensor BetaNetImpl::forward(const torch::Tensor &tap) {
    return torch::sigmoid(head->forward(trunk->forward(tap).mean({2, 3}))).squeeze(1);
}

MultiDiscriminatorImpl::MultiDiscriminatorImpl(DiscriminatorConfig config) : cfg(std::move(config)) {
    cfg.validate();
    for (int i = 0; i < cfg.n_discriminators; ++i) {
        discriminators.push_back(register_module(
            disc_name(i), PatchDiscriminator(disc_name(i), cfg.base_channels,
                                                   layers_for(cfg, static_cast<size_t>(i)), cfg.instance_norm)));
    }
    if (cfg.use_dfm && !cfg.fixed_beta && cfg.n_discriminators > 1) {
        const size_t source = cfg.beta_source == BetaSource::D1 ? 0 : 1;
        beta_net = register_module("beta", BetaNet(discriminators[source]->tap_channels(cfg.beta_tap), cfg.beta_hidden));
    }
}

int64_t MultiDiscriminatorImpl::expected_resolution(Resolution which) const {
    switch (which) {
    case Resolution::Full:
        return cfg.base_resolution;
    case Resolution::Half:
        return cfg.base_resolution / 2;
    case Resolution::Quarter:
        return cfg.base_resolution / 4;
    }
    return 0;
}

DiscriminatorOutput MultiDiscriminatorImpl::d_forward(const torch::Tensor &onehot, const torch::Tensor &image,
                                                      Resolution which) {
    const auto index = static_cast<size_t>(which);
    if (index >= discriminators.size()) throw ShapeError("d_forward: discriminator not configured");
    const auto res = expected_resolution(which);
    if (image.size(2) != res || image.size(3) != res || onehot.size(2) != res || onehot.size(3) != res) {
        throw ShapeError("d_forward: " + std::string(disc_name(index)) + " expects " + std::to_string(res) + "x" +
                         std::to_string(res) + " input");
    }
    return discriminators[index]->forward(onehot, image);
}

std::vector<DiscriminatorOutput> MultiDiscriminatorImpl::forward_all(const torch::Tensor &onehot_full,
                                                                     const torch::Tensor &image_full) {
    std::vector<DiscriminatorOutput> outs;
    torch::Tensor m = onehot_full;
    torch::Tensor x = image_full;
    for (size_t i = 0; i < discriminators.size(); ++i) {
        if (i > 0) {
            m = half_resolution_onehot(m);
            x = half_resolution_images(x);
        }
        outs.push_back(d_forward(m, x, static_cast<Resolution>(i)));
    }
    return outs;
}

torch::Tensor MultiDiscriminatorImpl::beta_forward(const torch::Tensor &tap) {
    if (cfg.fixed_beta) return torch::full({tap.size(0)}, *cfg.fixed_beta, tap.options());
    if (!beta_net) throw ShapeError("beta_forward: no beta network in this configuration");
    return beta_net->forward(tap);
}

std::vector<torch::Tensor> MultiDiscriminatorImpl::discriminator_parameters() const {
    std::vector<torch::Tensor> params;
    for (const auto &d : discriminators) {
        auto p = d->parameters();
        params.insert(params.end(), p.begin(), p.end());
    }
    return params;
}

std::vector<torch::Tensor> MultiDiscriminatorImpl::beta_parameters() const {
    return beta_net ? beta_net->parameters() : std::vector<torch::Tensor>{};
}

std::vector<LayerShape> discriminator_architecture(const DiscriminatorConfig &cfg, Resolution which) {
    const auto index = static_cast<size_t>(which);
    const int64_t n_layers = layers_for(cfg, index);
    int64_t n = cfg.base_resolution >> index;
    const std::string name = disc_name(index);
    std::vector<LayerShape> table;
    int64_t ch = cfg.base_channels;
    for (int64_t i = 0; i < n_layers; ++i) {
        n = (n - 2) / 2 + 1;
        if (i > 0) ch = std::min(ch * 2, cfg.base_channels * 8);
        table.push_back({name + ".block" + std::to_string(i + 1), ch, n, n});
    }
    ch = std::min(ch * 2, cfg.base_channels * 8);
    table.push_back({name + ".block" + std::to_string(n_layers + 1), ch, n - 1, n - 1});
    table.push_back({name + ".head", 1, n - 2, n - 2});
    return table;
}

}  // namespace ctsynth
