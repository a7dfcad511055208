#include "ctsynth/generator.hpp"

namespace ctsynth {

namespace nn = torch::nn;

namespace {

nn::Sequential conv_block(int64_t in, int64_t out, int64_t kernel, int64_t stride, int64_t padding) {
    return nn::Sequential(nn::Conv2d(conv_options(in, out, kernel, stride, padding)), nn::InstanceNorm2d(out),
                          nn::ReLU());
}

nn::Sequential input_block(int64_t in, int64_t out) {
    return nn::Sequential(nn::ReflectionPad2d(3), nn::Conv2d(conv_options(in, out, 7, 1, 0)), nn::InstanceNorm2d(out),
                          nn::ReLU());
}

nn::Sequential up_block(int64_t in, int64_t out) {
    return nn::Sequential(
        nn::ConvTranspose2d(nn::ConvTranspose2dOptions(in, out, 3).stride(2).padding(1).output_padding(1)),
        nn::InstanceNorm2d(out), nn::ReLU());
}

// tanh output rescaled from [-1,1] to [0,1]
nn::Sequential output_block(int64_t in) {
    return nn::Sequential(nn::ReflectionPad2d(3), nn::Conv2d(conv_options(in, 1, 7, 1, 0)), nn::Tanh());
}

torch::Tensor to_unit(const torch::Tensor &t) { return (t + 1.0) * 0.5; }

std::string level_name(size_t enhancer_index) { return "g" + std::to_string(enhancer_index + 2); }

void check_map(const torch::Tensor &onehot, int64_t resolution, const char *who) {
    if (onehot.dim() != 4 || onehot.size(1) != kNumClasses) {
        throw ShapeError(std::string(who) + ": expected a [B,4,H,W] one-hot map");
    }
    if (onehot.size(2) != resolution || onehot.size(3) != resolution) {
        throw ShapeError(std::string(who) + ": expected " + std::to_string(resolution) + "x" +
                         std::to_string(resolution) + " input, got " + std::to_string(onehot.size(2)) + "x" +
                         std::to_string(onehot.size(3)));
    }
}

}  // namespace

void GeneratorConfig::validate() const {
    if (n_generators < 1 || n_generators > 3) throw ConfigError("generator.n_generators", "must be 1, 2 or 3");
    if (fixed_alpha && (*fixed_alpha < 0.0 || *fixed_alpha > 1.0)) {
        throw ConfigError("generator.fixed_alpha", "must lie in [0,1]");
    }
    if (base_channels < 4 || base_channels % (1 << (n_generators - 1)) != 0 || base_channels % 2 != 0) {
        throw ConfigError("generator.base_channels", "must be even and divisible by 2^(n_generators-1), at least 4");
    }
    if (n_downsamples_g1 < 1) throw ConfigError("generator.n_downsamples_g1", "must be at least 1");
    if (n_residual_blocks < 0) throw ConfigError("generator.n_residual_blocks", "must be non-negative");
    if (n_residual_blocks_local < 0) throw ConfigError("generator.n_residual_blocks_local", "must be non-negative");
    const int64_t divisor = int64_t{1} << (n_generators - 1 + n_downsamples_g1);
    if (base_resolution < 8 || base_resolution % divisor != 0) {
        throw ConfigError("generator.base_resolution",
                          "must be a multiple of " + std::to_string(divisor) + " for this generator layout");
    }
}

int64_t GeneratorConfig::global_resolution() const {
    return n_generators == 1 ? base_resolution : base_resolution >> (n_generators - 1);
}

GlobalGeneratorImpl::GlobalGeneratorImpl(int64_t ngf, int64_t n_down, int64_t n_blocks) {
    body.add(*this, "g1", "in", input_block(kNumClasses, ngf));
    int64_t ch = ngf;
    for (int64_t i = 1; i <= n_down; ++i) {
        body.add(*this, "g1", "down" + std::to_string(i), conv_block(ch, ch * 2, 3, 2, 1));
        ch *= 2;
    }
    for (int64_t i = 1; i <= n_blocks; ++i) body.add(*this, "g1", "res" + std::to_string(i), nn::Sequential(ResnetBlock(ch)));
    for (int64_t i = 1; i <= n_down; ++i) {
        body.add(*this, "g1", "up" + std::to_string(i), up_block(ch, ch / 2));
        ch /= 2;
    }
    head.add(*this, "g1", "out", output_block(ch));
}

GlobalOutput GlobalGeneratorImpl::forward(const torch::Tensor &onehot, std::vector<LayerShape> *trace) {
    auto feature = body.run(onehot, trace);
    auto image = to_unit(head.run(feature, trace));
    return {image, FeatureMap{feature, "F_global"}};
}

LocalEnhancerImpl::LocalEnhancerImpl(std::string name_, int64_t width, int64_t n_blocks) : name(std::move(name_)) {
    encoder.add(*this, name, "in", input_block(kNumClasses, width));
    encoder.add(*this, name, "down", conv_block(width, width * 2, 3, 2, 1));
    for (int64_t i = 1; i <= n_blocks; ++i) {
        decoder.add(*this, name, "res" + std::to_string(i), nn::Sequential(ResnetBlock(width * 2)));
    }
    decoder.add(*this, name, "up", up_block(width * 2, width));
    head.add(*this, name, "out", output_block(width));
}

FeatureMap LocalEnhancerImpl::encode(const torch::Tensor &onehot, std::vector<LayerShape> *trace) {
    return {encoder.run(onehot, trace), "F_local"};
}

FeatureMap LocalEnhancerImpl::decode(const torch::Tensor &fused, std::vector<LayerShape> *trace) {
    return {decoder.run(fused, trace), name + "_up"};
}

torch::Tensor LocalEnhancerImpl::to_image(const FeatureMap &feature, std::vector<LayerShape> *trace) {
    return to_unit(head.run(feature.values, trace));
}

AlphaNetImpl::AlphaNetImpl(int64_t in_channels, int64_t hidden) {
    trunk = register_module(
        "trunk", nn::Sequential(nn::Conv2d(conv_options(in_channels, hidden, 3, 2, 1)),
                                nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)),
                                nn::Conv2d(conv_options(hidden, hidden, 3, 2, 1)),
                                nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)),
                                nn::Conv2d(conv_options(hidden, hidden, 3, 2, 1)),
                                nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2))));
    head = register_module("head", nn::Sequential(nn::Linear(hidden, hidden / 2), nn::ReLU(), nn::Linear(hidden / 2, 1)));
}

torch::Tensor AlphaNetImpl::forward(const torch::Tensor &x) {
    auto pooled = trunk->forward(x).mean({2, 3});
    return torch::sigmoid(head->forward(pooled)).squeeze(1);
}

FeatureMap desum(const FeatureMap &local, const FeatureMap &global, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ShapeError("desum: alpha must lie in [0,1]");
    if (local.values.sizes() != global.values.sizes()) throw ShapeError("desum: feature dimensions differ");
    return {alpha * local.values + (1.0 - alpha) * global.values, "F_out"};
}

FeatureMap desum(const FeatureMap &local, const FeatureMap &global, const torch::Tensor &alpha) {
    if (local.values.sizes() != global.values.sizes()) throw ShapeError("desum: feature dimensions differ");
    if (alpha.dim() != 1 || alpha.size(0) != local.values.size(0)) {
        throw ShapeError("desum: expected one weight per sample");
    }
    auto a = alpha.view({-1, 1, 1, 1});
    return {a * local.values + (1.0 - a) * global.values, "F_out"};
}

GeneratorImpl::GeneratorImpl(GeneratorConfig config) : cfg(std::move(config)) {
    cfg.validate();
    const int64_t ngf = cfg.base_channels;
    if (cfg.n_generators == 1) {
        enhancers.push_back(register_module("local0", LocalEnhancer(level_name(0), ngf / 2, cfg.n_residual_blocks_local)));
        return;
    }
    global = register_module("global", GlobalGenerator(ngf, cfg.n_downsamples_g1, cfg.n_residual_blocks));
    const bool learn_alpha = cfg.use_desum && !cfg.fixed_alpha;
    for (int j = 0; j < cfg.n_generators - 1; ++j) {
        const int64_t width = ngf >> (j + 1);
        enhancers.push_back(register_module("local" + std::to_string(j),
                                            LocalEnhancer(level_name(j), width, cfg.n_residual_blocks_local)));
        if (learn_alpha) {
            const int64_t in = cfg.alpha_input == AlphaInput::Concat ? 4 * width : 2 * width;
            alpha_nets.push_back(register_module("alpha" + std::to_string(j), AlphaNet(in, cfg.alpha_hidden)));
        }
    }
}

GlobalOutput GeneratorImpl::g1_forward(const torch::Tensor &onehot_coarse) {
    if (!global) throw ShapeError("g1_forward: this configuration has no global generator");
    check_map(onehot_coarse, cfg.global_resolution(), "g1_forward");
    return global->forward(onehot_coarse);
}

torch::Tensor GeneratorImpl::g2_forward(const torch::Tensor &onehot_full, const FeatureMap &global_feature,
                                        double alpha) {
    check_map(onehot_full, cfg.base_resolution, "g2_forward");
    auto &g2 = enhancers.back();
    auto local = g2->encode(onehot_full);
    if (local.values.sizes() != global_feature.values.sizes()) {
        throw ShapeError("g2_forward: F_global dims do not match G2's down-sampled features");
    }
    auto fused = cfg.use_desum ? desum(local, global_feature, alpha) : local;
    return g2->to_image(g2->decode(fused.values));
}

torch::Tensor GeneratorImpl::local_forward(const torch::Tensor &onehot_full) {
    check_map(onehot_full, cfg.base_resolution, "local_forward");
    auto &g2 = enhancers.back();
    return g2->to_image(g2->decode(g2->encode(onehot_full).values));
}

torch::Tensor GeneratorImpl::alpha_forward(size_t level, const FeatureMap &local, const FeatureMap &global_feature) {
    const auto batch = local.values.size(0);
    if (cfg.fixed_alpha) return torch::full({batch}, *cfg.fixed_alpha, local.values.options());
    if (level >= alpha_nets.size()) throw ShapeError("alpha_forward: no weighting network at this level");
    torch::Tensor input;
    switch (cfg.alpha_input) {
    case AlphaInput::Concat:
        input = torch::cat({local.values, global_feature.values}, 1);
        break;
    case AlphaInput::GlobalOnly:
        input = global_feature.values;
        break;
    case AlphaInput::LocalOnly:
        input = local.values;
        break;
    }
    return alpha_nets[level]->forward(input);
}

GeneratorOutput GeneratorImpl::forward(const torch::Tensor &onehot_full, std::vector<LayerShape> *trace) {
    check_map(onehot_full, cfg.base_resolution, "generator");
    const auto batch = onehot_full.size(0);
    GeneratorOutput out;
    if (cfg.n_generators == 1) {
        auto &g2 = enhancers.front();
        auto feature = g2->decode(g2->encode(onehot_full, trace).values, trace);
        out.image = g2->to_image(feature, trace);
        out.alpha = torch::ones({batch}, onehot_full.options());
        out.alphas.push_back(out.alpha);
        return out;
    }

    std::vector<torch::Tensor> pyramid{onehot_full};
    for (int i = 1; i < cfg.n_generators; ++i) pyramid.push_back(half_resolution_onehot(pyramid.back()));

    auto g1 = global->forward(pyramid.back(), trace);
    out.coarse_image = g1.image;
    FeatureMap feature = g1.feature;
    for (size_t j = 0; j < enhancers.size(); ++j) {
        auto &enh = enhancers[j];
        const auto &map = pyramid[pyramid.size() - 2 - j];
        auto local = enh->encode(map, trace);
        FeatureMap fused;
        torch::Tensor alpha;
        if (!cfg.use_desum) {
            fused = local;
            alpha = torch::ones({batch}, onehot_full.options());
        } else {
            FeatureMap global_in = cfg.zero_global_feature
                                       ? FeatureMap{torch::zeros_like(feature.values), "zeros"}
                                       : feature;
            alpha = alpha_forward(j, local, global_in);
            fused = desum(local, global_in, alpha);
        }
        out.alphas.push_back(alpha);
        feature = enh->decode(fused.values, trace);
        if (j + 1 == enhancers.size()) out.image = enh->to_image(feature, trace);
    }
    out.alpha = out.alphas.back();
    return out;
}

std::vector<torch::Tensor> GeneratorImpl::g1_parameters() const {
    return global ? global->parameters() : std::vector<torch::Tensor>{};
}

std::vector<torch::Tensor> GeneratorImpl::g2_parameters() const {
    std::vector<torch::Tensor> params;
    for (const auto &e : enhancers) {
        auto p = e->parameters();
        params.insert(params.end(), p.begin(), p.end());
    }
    return params;
}

std::vector<torch::Tensor> GeneratorImpl::alpha_parameters() const {
    std::vector<torch::Tensor> params;
    for (const auto &a : alpha_nets) {
        auto p = a->parameters();
        params.insert(params.end(), p.begin(), p.end());
    }
    return params;
}

std::vector<LayerShape> generator_architecture(const GeneratorConfig &cfg) {
    cfg.validate();
    std::vector<LayerShape> table;
    const int64_t ngf = cfg.base_channels;
    auto enhancer_rows = [&](const std::string &name, int64_t width, int64_t res) {
        table.push_back({name + ".in", width, res, res});
        table.push_back({name + ".down", 2 * width, res / 2, res / 2});
        for (int64_t i = 1; i <= cfg.n_residual_blocks_local; ++i) {
            table.push_back({name + ".res" + std::to_string(i), 2 * width, res / 2, res / 2});
        }
        table.push_back({name + ".up", width, res, res});
    };
    if (cfg.n_generators == 1) {
        enhancer_rows(level_name(0), ngf / 2, cfg.base_resolution);
        table.push_back({level_name(0) + ".out", 1, cfg.base_resolution, cfg.base_resolution});
        return table;
    }
    int64_t res = cfg.global_resolution();
    int64_t ch = ngf;
    table.push_back({"g1.in", ch, res, res});
    for (int64_t i = 1; i <= cfg.n_downsamples_g1; ++i) {
        ch *= 2;
        res /= 2;
        table.push_back({"g1.down" + std::to_string(i), ch, res, res});
    }
    for (int64_t i = 1; i <= cfg.n_residual_blocks; ++i) table.push_back({"g1.res" + std::to_string(i), ch, res, res});
    for (int64_t i = 1; i <= cfg.n_downsamples_g1; ++i) {
        ch /= 2;
        res *= 2;
        table.push_back({"g1.up" + std::to_string(i), ch, res, res});
    }
    table.push_back({"g1.out", 1, res, res});
    for (int j = 0; j < cfg.n_generators - 1; ++j) {
        const int64_t level_res = cfg.global_resolution() << (j + 1);
        enhancer_rows(level_name(j), ngf >> (j + 1), level_res);
        if (j + 2 == cfg.n_generators) table.push_back({level_name(j) + ".out", 1, level_res, level_res});
    }
    return table;
}

}  // namespace ctsynth
