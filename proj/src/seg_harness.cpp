#include "ctsynth/seg_harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "ctsynth/seeding.hpp"
#include "ctsynth/synthesis.hpp"

namespace ctsynth {

namespace nn = torch::nn;

std::string mix_mode_name(MixMode m) { return m == MixMode::Replace ? "replace" : "add"; }

MixMode parse_mix_mode(const std::string &s) {
    if (s == "replace") return MixMode::Replace;
    if (s == "add") return MixMode::Add;
    throw ConfigError("mode", "expected replace or add, got " + s);
}

void MixSpec::validate() const {
    const double tenths = ratio * 10.0;
    if (ratio < 0.0 || ratio > 0.5 + 1e-9 || std::abs(tenths - std::round(tenths)) > 1e-9) {
        throw ConfigError("ratio", "must be one of 0.0, 0.1, ..., 0.5");
    }
}

void SegTrainConfig::validate() const {
    if (depth < 2) throw ConfigError("seg.depth", "must be at least 2");
    if (base_channels < 1) throw ConfigError("seg.base_channels", "must be positive");
    if (epochs < 0) throw ConfigError("seg.epochs", "must be non-negative");
    if (batch_size < 1) throw ConfigError("seg.batch_size", "must be at least 1");
    if (steps_per_epoch < 0) throw ConfigError("seg.steps_per_epoch", "must be non-negative");
    if (!(lr > 0.0)) throw ConfigError("seg.lr", "must be positive");
}

namespace {

nn::Sequential double_conv(int64_t in, int64_t out) {
    return nn::Sequential(nn::Conv2d(conv_options(in, out, 3, 1, 1)), nn::ReLU(),
                          nn::Conv2d(conv_options(out, out, 3, 1, 1)), nn::ReLU());
}

}  // namespace

UNetImpl::UNetImpl(int64_t base, int d) : base_channels(base), depth(d) {
    if (depth < 2) throw ConfigError("seg.depth", "must be at least 2");
    int64_t in = 1;
    for (int l = 0; l < depth; ++l) {
        const int64_t ch = base << l;
        down.push_back(register_module("enc" + std::to_string(l + 1), double_conv(in, ch)));
        in = ch;
    }
    for (int l = depth - 2; l >= 0; --l) {
        const int64_t ch = base << l;
        up.push_back(register_module("up" + std::to_string(l + 1),
                                     nn::ConvTranspose2d(nn::ConvTranspose2dOptions(2 * ch, ch, 2).stride(2))));
        merge.push_back(register_module("dec" + std::to_string(l + 1), double_conv(2 * ch, ch)));
    }
    head = register_module("head", nn::Conv2d(conv_options(base, kNumClasses, 1, 1, 0)));
}

torch::Tensor UNetImpl::forward(const torch::Tensor &x, std::vector<LayerShape> *trace) {
    const int64_t factor = int64_t{1} << (depth - 1);
    if (x.dim() != 4 || x.size(1) != 1 || x.size(2) % factor != 0 || x.size(3) % factor != 0) {
        throw ShapeError("unet: input must be [B,1,H,W] with H and W divisible by " + std::to_string(factor));
    }
    auto record = [&](const std::string &name, const torch::Tensor &t) {
        if (trace) trace->push_back({"unet." + name, t.size(1), t.size(2), t.size(3)});
    };
    std::vector<torch::Tensor> skips;
    torch::Tensor h = x;
    for (int l = 0; l < depth; ++l) {
        if (l > 0) h = torch::max_pool2d(h, 2);
        h = down[l]->forward(h);
        record("enc" + std::to_string(l + 1), h);
        skips.push_back(h);
    }
    for (size_t k = 0; k < up.size(); ++k) {
        const int l = depth - 2 - static_cast<int>(k);
        h = up[k]->forward(h);
        h = merge[k]->forward(torch::cat({skips[l], h}, 1));
        record("dec" + std::to_string(l + 1), h);
    }
    h = head->forward(h);
    record("out", h);
    return h;
}

UNet build_unet(int64_t base_channels, int depth) { return UNet(base_channels, depth); }

std::vector<LayerShape> unet_architecture(int64_t base, int depth, int64_t res) {
    std::vector<LayerShape> table;
    for (int l = 0; l < depth; ++l) table.push_back({"unet.enc" + std::to_string(l + 1), base << l, res >> l, res >> l});
    for (int l = depth - 2; l >= 0; --l) table.push_back({"unet.dec" + std::to_string(l + 1), base << l, res >> l, res >> l});
    table.push_back({"unet.out", kNumClasses, res, res});
    return table;
}

int64_t synthetic_count(int64_t n_real, const MixSpec &spec) {
    return static_cast<int64_t>(std::llround(spec.ratio * static_cast<double>(n_real)));
}

std::vector<PairedSample> mix_dataset(const std::vector<PairedSample> &real_pool,
                                      const std::vector<PairedSample> &synth_pool, const MixSpec &spec) {
    spec.validate();
    const auto n = static_cast<int64_t>(real_pool.size());
    const auto k = synthetic_count(n, spec);
    if (k > static_cast<int64_t>(synth_pool.size())) {
        throw DataError("synthetic pool has " + std::to_string(synth_pool.size()) + " samples, mix needs " +
                        std::to_string(k));
    }
    std::vector<PairedSample> out;
    if (spec.mode == MixMode::Replace && k > 0) {
        std::vector<int64_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(derive_seed(spec.seed, 1));
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<bool> dropped(n, false);
        for (int64_t i = 0; i < k; ++i) dropped[order[i]] = true;
        for (int64_t i = 0; i < n; ++i) {
            if (!dropped[i]) out.push_back(real_pool[i]);
        }
    } else {
        out = real_pool;
    }
    if (k > 0) {
        std::vector<int64_t> order(synth_pool.size());
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(derive_seed(spec.seed, 2));
        std::shuffle(order.begin(), order.end(), rng);
        order.resize(k);
        std::sort(order.begin(), order.end());
        for (auto i : order) out.push_back(synth_pool[i]);
    }
    std::set<std::string> ids;
    for (const auto &s : out) {
        if (!ids.insert(s.id).second) throw DataError("mixed manifest repeats sample id " + s.id);
    }
    return out;
}

UNet train_unet(const std::vector<PairedSample> &train, const SegTrainConfig &cfg, std::vector<double> *losses) {
    cfg.validate();
    if (train.empty()) throw DataError("segmentation training set is empty");
    if (cfg.deterministic) {
        torch::set_num_threads(1);
        at::globalContext().setDeterministicAlgorithms(true, false);
    }
    torch::manual_seed(cfg.seed);
    UNet net = build_unet(cfg.base_channels, cfg.depth);
    auto images = stack_images(train);
    std::vector<torch::Tensor> label_list;
    for (const auto &s : train) label_list.push_back(s.map.labels().to(torch::kLong));
    auto labels = torch::stack(label_list);

    torch::optim::Adam opt(net->parameters(),
                           torch::optim::AdamOptions(cfg.lr).betas({cfg.adam_beta1, cfg.adam_beta2}));
    const auto n = static_cast<int64_t>(train.size());
    const int64_t bs = std::min<int64_t>(cfg.batch_size, n);
    const int64_t steps = cfg.steps_per_epoch > 0 ? cfg.steps_per_epoch : (n + bs - 1) / bs;
    for (int e = 0; e < cfg.epochs; ++e) {
        std::vector<int64_t> order;
        for (uint64_t pass = 0; static_cast<int64_t>(order.size()) < steps * bs; ++pass) {
            std::vector<int64_t> perm(n);
            std::iota(perm.begin(), perm.end(), 0);
            std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<uint64_t>(e), pass));
            std::shuffle(perm.begin(), perm.end(), rng);
            order.insert(order.end(), perm.begin(), perm.end());
        }
        for (int64_t s = 0; s < steps; ++s) {
            auto idx = torch::tensor(std::vector<int64_t>(order.begin() + s * bs, order.begin() + (s + 1) * bs));
            opt.zero_grad();
            auto logits = net->forward(images.index_select(0, idx));
            auto loss = torch::nn::functional::cross_entropy(logits, labels.index_select(0, idx));
            const double v = loss.item<double>();
            if (!std::isfinite(v)) throw NumericalError("segmentation loss is not finite at epoch " + std::to_string(e));
            if (losses) losses->push_back(v);
            loss.backward();
            opt.step();
        }
    }
    return net;
}

std::vector<FocusScores> evaluate_unet(UNet &net, const std::vector<PairedSample> &eval_set) {
    torch::NoGradGuard ng;
    std::vector<FocusScores> scores;
    const size_t chunk = 16;
    for (size_t start = 0; start < eval_set.size(); start += chunk) {
        const size_t end = std::min(eval_set.size(), start + chunk);
        std::span<const PairedSample> part(eval_set.data() + start, end - start);
        auto pred = net->forward(stack_images(part)).argmax(1);
        for (size_t i = 0; i < part.size(); ++i) {
            const auto &truth = part[i].map.labels();
            const auto p = pred[static_cast<int64_t>(i)];
            FocusScores f;
            f.ggo = dice_sen_spec(p == 2, truth == 2);
            f.consolidation = dice_sen_spec(p == 3, truth == 3);
            f.infection = dice_sen_spec(p >= 2, truth >= 2);
            scores.push_back(f);
        }
    }
    return scores;
}

const std::vector<std::string> &seg_metric_names() {
    static const std::vector<std::string> names{"ggo_dice",           "ggo_sen",           "ggo_spec",
                                                "consolidation_dice", "consolidation_sen", "consolidation_spec",
                                                "infection_dice",     "infection_sen",     "infection_spec"};
    return names;
}

std::vector<PairedSample> synthetic_pool(const std::vector<PairedSample> &real, Generator &g,
                                         const AugmentConfig &augment, int64_t count, uint64_t seed) {
    if (count > 0 && real.empty()) throw DataError("cannot build a synthetic pool from an empty real set");
    std::vector<PairedSample> pool;
    for (int64_t k = 0; k < count; ++k) {
        const auto &src = real[k % static_cast<int64_t>(real.size())];
        AugmentConfig a = augment;
        a.seed = derive_seed(seed, static_cast<uint64_t>(k));
        auto aug = ctsynth::augment(src, a);
        auto image = composite(synthesize(aug.map, g), aug.image, aug.map);
        pool.emplace_back("synth_" + src.id + "_" + std::to_string(k), src.patient_tag, aug.map, image);
    }
    return pool;
}

SegData segmentation_data(const DatasetManifest &dataset, Generator &g, int64_t synth_count, uint64_t seed,
                          const SegmentationRoles &roles) {
    SegData d;
    d.real_pool = materialize_split(dataset, roles.train_real);
    d.eval_set = materialize_split(dataset, roles.evaluation);
    d.synth_pool = synthetic_pool(d.real_pool, g, dataset.plan.augment, synth_count, seed);
    return d;
}

std::vector<SegCell> run_experiment(const SegExperiment &exp, const SegData &data) {
    std::vector<SegCell> cells;
    for (const auto &spec : exp.grid) {
        SegCell cell;
        cell.spec = spec;
        try {
            auto train = mix_dataset(data.real_pool, data.synth_pool, spec);
            auto net = train_unet(train, exp.train, &cell.losses);
            auto scores = evaluate_unet(net, data.eval_set);
            std::map<std::string, std::vector<double>> values;
            for (const auto &s : scores) {
                const SegScores *parts[3] = {&s.ggo, &s.consolidation, &s.infection};
                const char *names[3] = {"ggo", "consolidation", "infection"};
                for (int c = 0; c < 3; ++c) {
                    values[std::string(names[c]) + "_dice"].push_back(parts[c]->dice);
                    values[std::string(names[c]) + "_sen"].push_back(parts[c]->sensitivity);
                    values[std::string(names[c]) + "_spec"].push_back(parts[c]->specificity);
                }
            }
            for (const auto &name : seg_metric_names()) cell.metrics[name] = fold_report(values[name], exp.folds);
        } catch (const std::exception &ex) {
            cell.metrics.clear();
            cell.error = ex.what();
        }
        cells.push_back(std::move(cell));
    }
    return cells;
}

namespace {

std::string fixed(double v, int digits) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, digits);
    return std::string(buf, r.ptr);
}

std::string csv_field(std::string s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c == '\n' ? ' ' : c;
    }
    return out + "\"";
}

}  // namespace

void write_experiment_csv(std::ostream &os, const std::vector<SegCell> &cells) {
    os << "mode,ratio";
    for (const auto &name : seg_metric_names()) os << "," << name;
    os << ",status\n";
    for (const auto &c : cells) {
        os << mix_mode_name(c.spec.mode) << "," << fixed(c.spec.ratio, 1);
        for (const auto &name : seg_metric_names()) {
            os << ",";
            auto it = c.metrics.find(name);
            if (it != c.metrics.end()) os << fixed(100.0 * it->second.mean, 2) << "±" << fixed(100.0 * it->second.ci95, 2);
        }
        os << "," << (c.error.empty() ? "ok" : csv_field("error: " + c.error)) << "\n";
    }
}

}  // namespace ctsynth
