#include "ctsynth/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "ctsynth/config.hpp"
#include "ctsynth/seeding.hpp"

namespace ctsynth {

namespace fs = std::filesystem;

void TrainConfig::validate() {
    if (epochs_total < 1) throw ConfigError("train.epochs_total", "must be at least 1");
    for (int i = 0; i < 3; ++i) {
        if (stage_epochs[i] < 0) throw ConfigError("train.stage_epochs", "entries must be non-negative");
    }
    if (stage_epochs[0] + stage_epochs[1] + stage_epochs[2] != epochs_total) {
        throw ConfigError("train.stage_epochs", "must sum to train.epochs_total");
    }
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr", "must be positive");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ConfigError("train.adam_beta1", "must lie in [0,1)");
    if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ConfigError("train.adam_beta2", "must lie in [0,1)");
    if (!(lambda_fm >= 0.0) || !std::isfinite(lambda_fm)) throw ConfigError("train.lambda_fm", "must be non-negative");
    if (batch_size < 1) throw ConfigError("train.batch_size", "must be at least 1");
    if (steps_per_epoch < 0) throw ConfigError("train.steps_per_epoch", "must be non-negative");
    discriminator.base_resolution = generator.base_resolution;
    generator.validate();
    discriminator.validate();
}

double lr_at(int epoch, const TrainConfig &cfg) {
    if (epoch < 0 || epoch >= cfg.epochs_total) {
        throw ConfigError("epoch", "epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(cfg.epochs_total) + ")");
    }
    const double half = cfg.epochs_total / 2.0;
    if (epoch < half) return cfg.lr;
    return cfg.lr * std::max(0.0, 1.0 - (epoch - half + 1.0) / half);
}

int stage_begin(Stage s, const TrainConfig &cfg) {
    const int i = static_cast<int>(s) - 1;
    int b = 0;
    for (int k = 0; k < i; ++k) b += cfg.stage_epochs[k];
    return b;
}

int stage_end(Stage s, const TrainConfig &cfg) {
    return stage_begin(s, cfg) + cfg.stage_epochs[static_cast<int>(s) - 1];
}

Stage stage_of_epoch(int epoch, const TrainConfig &cfg) {
    if (epoch < stage_end(Stage::Global, cfg)) return Stage::Global;
    if (epoch < stage_end(Stage::Local, cfg)) return Stage::Local;
    return Stage::Joint;
}

namespace {

std::vector<torch::Tensor> tensors_of(const std::vector<std::pair<std::string, torch::Tensor>> &named) {
    std::vector<torch::Tensor> out;
    for (const auto &[n, t] : named) out.push_back(t);
    return out;
}

void add_named(std::vector<std::pair<std::string, torch::Tensor>> &out, const torch::nn::Module &m, const std::string &prefix) {
    for (const auto &p : m.named_parameters()) out.emplace_back(prefix + "." + p.key(), p.value());
}

bool starts_with(const std::string &s, const std::string &prefix) { return s.rfind(prefix, 0) == 0; }

double batch_mean(const torch::Tensor &t) { return t.defined() ? t.detach().mean().item<double>() : 0.0; }

std::string format_progress(const TrainProgress &p) {
    std::ostringstream ss;
    ss << "[progress]\nepoch = " << p.epoch << "\nstep = " << p.step << "\n\n";
    return ss.str();
}

void save_adam_state(torch::optim::Adam &opt, const std::vector<std::pair<std::string, torch::Tensor>> &params,
                     const std::string &prefix, std::map<std::string, torch::Tensor> &out) {
    auto &state = opt.state();
    for (const auto &[name, p] : params) {
        auto it = state.find(p.unsafeGetTensorImpl());
        if (it == state.end()) continue;
        auto &s = static_cast<torch::optim::AdamParamState &>(*it->second);
        out[prefix + "." + name + ".exp_avg"] = s.exp_avg().detach().clone();
        out[prefix + "." + name + ".exp_avg_sq"] = s.exp_avg_sq().detach().clone();
        out[prefix + "." + name + ".step"] = torch::tensor({static_cast<float>(s.step())});
    }
}

void load_adam_state(torch::optim::Adam &opt, const std::vector<std::pair<std::string, torch::Tensor>> &params,
                     const std::string &prefix, const std::map<std::string, torch::Tensor> &in) {
    auto &state = opt.state();
    state.clear();
    for (const auto &[name, p] : params) {
        const auto key = prefix + "." + name;
        auto it = in.find(key + ".step");
        if (it == in.end()) continue;
        auto s = std::make_unique<torch::optim::AdamParamState>();
        s->step(static_cast<int64_t>(it->second.item<float>()));
        s->exp_avg(in.at(key + ".exp_avg").clone());
        s->exp_avg_sq(in.at(key + ".exp_avg_sq").clone());
        state[p.unsafeGetTensorImpl()] = std::move(s);
    }
}

}  // namespace

Trainer::Trainer(TrainConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    if (cfg_.deterministic) {
        torch::set_num_threads(1);
        at::globalContext().setDeterministicAlgorithms(true, false);
    }
    torch::manual_seed(cfg_.seed);
    generator_ = Generator(cfg_.generator);
    discriminator_ = MultiDiscriminator(cfg_.discriminator);
    init_gan_weights(*generator_);
    init_gan_weights(*discriminator_);
    build_optimizers();
}

void Trainer::build_optimizers() {
    g_params_.clear();
    d_params_.clear();
    for (const auto &p : generator_->named_parameters()) {
        if (cfg_.alpha_owner == WeightNetOwner::Frozen && starts_with(p.key(), "alpha")) continue;
        g_params_.emplace_back("generator." + p.key(), p.value());
    }
    if (discriminator_->beta_net && cfg_.beta_owner == WeightNetOwner::Generator) {
        add_named(g_params_, *discriminator_->beta_net, "discriminator.beta");
    }
    for (size_t i = 0; i < discriminator_->discriminators.size(); ++i) {
        add_named(d_params_, *discriminator_->discriminators[i], "discriminator.d" + std::to_string(i + 1));
    }
    auto opts = torch::optim::AdamOptions(cfg_.lr).betas({cfg_.adam_beta1, cfg_.adam_beta2});
    opt_g_ = std::make_unique<torch::optim::Adam>(tensors_of(g_params_), opts);
    opt_d_ = std::make_unique<torch::optim::Adam>(tensors_of(d_params_), opts);
}

std::vector<std::pair<std::string, torch::Tensor>> Trainer::generator_side_parameters() const { return g_params_; }
std::vector<std::pair<std::string, torch::Tensor>> Trainer::discriminator_side_parameters() const { return d_params_; }

void Trainer::set_data(const std::vector<PairedSample> &train) {
    if (train.empty()) throw DataError("training set is empty");
    const auto res = cfg_.generator.base_resolution;
    ids_.clear();
    for (const auto &s : train) {
        if (s.map.width() != res) {
            throw DataError("sample " + s.id + " is " + std::to_string(s.map.width()) + "px, config expects " + std::to_string(res));
        }
        ids_.push_back(s.id);
    }
    maps_ = {stack_onehot(train)};
    images_ = {stack_images(train)};
    for (int level = 1; level < 3 && (res >> level) >= 4; ++level) {
        maps_.push_back(half_resolution_onehot(maps_.back()));
        images_.push_back(half_resolution_images(images_.back()));
    }
}

size_t Trainer::data_size() const { return ids_.size(); }

Trainer::Batch Trainer::gather(const std::vector<int64_t> &idx) const {
    auto index = torch::tensor(idx, torch::kLong);
    Batch b;
    for (size_t l = 0; l < maps_.size(); ++l) {
        b.maps.push_back(maps_[l].index_select(0, index));
        b.images.push_back(images_[l].index_select(0, index));
    }
    return b;
}

std::vector<std::vector<int64_t>> Trainer::epoch_batches(int epoch) const {
    const auto n = static_cast<int64_t>(ids_.size());
    const int64_t bs = std::min<int64_t>(cfg_.batch_size, n);
    const int64_t steps = cfg_.steps_per_epoch > 0 ? cfg_.steps_per_epoch : (n + bs - 1) / bs;
    std::vector<int64_t> order;
    for (uint64_t pass = 0; static_cast<int64_t>(order.size()) < steps * bs; ++pass) {
        std::vector<int64_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        std::mt19937_64 rng(derive_seed(cfg_.seed, static_cast<uint64_t>(epoch), pass));
        std::shuffle(perm.begin(), perm.end(), rng);
        order.insert(order.end(), perm.begin(), perm.end());
    }
    std::vector<std::vector<int64_t>> batches;
    for (int64_t s = 0; s < steps; ++s) batches.emplace_back(order.begin() + s * bs, order.begin() + (s + 1) * bs);
    return batches;
}

Stage Trainer::effective(Stage s) const {
    if (cfg_.generator.n_generators == 1 && s == Stage::Global) return Stage::Local;
    return s;
}

size_t Trainer::stage1_discriminator() const { return discriminator_->discriminators.size() > 1 ? 1 : 0; }

torch::Tensor Trainer::coarse_fake(const torch::Tensor &coarse, size_t disc) const {
    const auto res = discriminator_->expected_resolution(static_cast<Resolution>(disc));
    if (coarse.size(2) == res) return coarse;
    return torch::nn::functional::interpolate(
        coarse, torch::nn::functional::InterpolateFuncOptions()
                    .size(std::vector<int64_t>{res, res})
                    .mode(torch::kBilinear)
                    .align_corners(false));
}

void Trainer::set_lr(double lr) {
    for (auto *opt : {opt_g_.get(), opt_d_.get()}) {
        for (auto &g : opt->param_groups()) static_cast<torch::optim::AdamOptions &>(g.options()).lr(lr);
    }
}

double Trainer::discriminator_step(Stage stage, const std::vector<int64_t> &idx, double lr) {
    stage = effective(stage);
    set_lr(lr);
    auto b = gather(idx);
    opt_d_->zero_grad();
    torch::Tensor loss;
    if (stage == Stage::Global) {
        const auto di = stage1_discriminator();
        const auto gl = static_cast<size_t>(cfg_.generator.n_generators - 1);
        torch::Tensor fake;
        {
            torch::NoGradGuard ng;
            fake = coarse_fake(generator_->g1_forward(b.maps[gl]).image, di);
        }
        auto &d = discriminator_->discriminators[di];
        auto real = d->forward(b.maps[di], b.images[di]);
        auto fk = d->forward(b.maps[di], fake);
        loss = cgan_loss_d({real.grid}, {fk.grid});
    } else if (stage == Stage::Local) {
        torch::Tensor fake;
        {
            torch::NoGradGuard ng;
            fake = generator_->local_forward(b.maps[0]);
        }
        auto &d = discriminator_->discriminators[0];
        loss = cgan_loss_d({d->forward(b.maps[0], b.images[0]).grid}, {d->forward(b.maps[0], fake).grid});
    } else {
        torch::Tensor fake;
        {
            torch::NoGradGuard ng;
            fake = generator_->forward(b.maps[0]).image;
        }
        auto real = discriminator_->forward_all(b.maps[0], b.images[0]);
        auto fk = discriminator_->forward_all(b.maps[0], fake);
        std::vector<torch::Tensor> rg, fg;
        for (size_t i = 0; i < real.size(); ++i) {
            rg.push_back(real[i].grid);
            fg.push_back(fk[i].grid);
        }
        loss = cgan_loss_d(rg, fg);
    }
    const double value = loss.item<double>();
    if (!std::isfinite(value)) {
        LossReport r;
        r.step = progress_.step;
        r.d_adv = value;
        r.lr = lr;
        check_finite(r, idx);
    }
    loss.backward();
    opt_d_->step();
    return value;
}

LossReport Trainer::generator_step(Stage stage, const std::vector<int64_t> &idx, double lr) {
    stage = effective(stage);
    set_lr(lr);
    auto b = gather(idx);
    opt_g_->zero_grad();
    LossReport r;
    r.step = progress_.step;
    r.lr = lr;
    torch::Tensor adv, dfm;
    if (stage == Stage::Global || stage == Stage::Local) {
        const bool global_stage = stage == Stage::Global;
        const size_t di = global_stage ? stage1_discriminator() : 0;
        torch::Tensor fake;
        if (global_stage) {
            const auto gl = static_cast<size_t>(cfg_.generator.n_generators - 1);
            fake = coarse_fake(generator_->g1_forward(b.maps[gl]).image, di);
        } else {
            fake = generator_->local_forward(b.maps[di]);
        }
        auto &d = discriminator_->discriminators[di];
        auto fk = d->forward(b.maps[di], fake);
        adv = cgan_loss_g({fk.grid}, cfg_.g_loss);
        if (cfg_.discriminator.use_dfm) {
            DiscriminatorOutput real;
            {
                torch::NoGradGuard ng;
                real = d->forward(b.maps[di], b.images[di]);
            }
            dfm = feature_distance(real.taps, fk.taps).mean();
        }
        r.alpha = 1.0;
        r.beta = di == 0 ? 0.0 : 1.0;
    } else {
        auto out = generator_->forward(b.maps[0]);
        auto fk = discriminator_->forward_all(b.maps[0], out.image);
        std::vector<torch::Tensor> fg;
        for (const auto &o : fk) fg.push_back(o.grid);
        adv = cgan_loss_g(fg, cfg_.g_loss);
        if (cfg_.supervise_g1_joint && out.coarse_image.defined()) {
            const auto di = stage1_discriminator();
            auto &d = discriminator_->discriminators[di];
            adv = adv + cgan_loss_g({d->forward(b.maps[di], coarse_fake(out.coarse_image, di)).grid}, cfg_.g_loss);
        }
        r.alpha = batch_mean(out.alpha);
        const auto nd = discriminator_->discriminators.size();
        if (cfg_.discriminator.use_dfm) {
            std::vector<DiscriminatorOutput> real;
            {
                torch::NoGradGuard ng;
                real = discriminator_->forward_all(b.maps[0], b.images[0]);
            }
            torch::Tensor beta;
            if (nd == 1) {
                beta = torch::zeros({out.image.size(0)});
            } else {
                const size_t src = cfg_.discriminator.beta_source == BetaSource::D1 ? 0 : 1;
                beta = discriminator_->beta_forward(real[src].taps[cfg_.discriminator.beta_tap - 1]);
            }
            std::vector<std::vector<torch::Tensor>> rt, ft;
            for (size_t i = 0; i < nd; ++i) {
                rt.push_back(real[i].taps);
                ft.push_back(fk[i].taps);
            }
            dfm = weighted_feature_matching(rt, ft, dfm_weights(beta, nd));
            r.beta = batch_mean(beta);
        }
    }
    if (!dfm.defined()) dfm = torch::zeros({});
    auto total = total_objective(adv, dfm, cfg_.lambda_fm);
    r.g_adv = adv.item<double>();
    r.dfm = dfm.item<double>();
    r.total = total.item<double>();
    check_finite(r, idx);
    total.backward();
    opt_g_->step();
    return r;
}

LossReport Trainer::train_step(Stage stage, const std::vector<int64_t> &batch, double lr) {
    const double d = discriminator_step(stage, batch, lr);
    auto r = generator_step(stage, batch, lr);
    r.d_adv = d;
    ++progress_.step;
    history_.push_back(r);
    if (log_) write_log_row(*log_, r);
    return r;
}

void Trainer::check_finite(const LossReport &r, const std::vector<int64_t> &batch) {
    if (r.finite()) return;
    std::ostringstream msg;
    msg << "non-finite loss at step " << r.step << " (g_adv=" << r.g_adv << ", d_adv=" << r.d_adv << ", dfm=" << r.dfm
        << ")";
    if (!diagnostics_dir_.empty()) {
        fs::create_directories(diagnostics_dir_);
        std::ofstream out(diagnostics_dir_ / "nan_dump.txt");
        out << msg.str() << "\nepoch " << progress_.epoch << "\nbatch";
        for (auto i : batch) out << " " << (i < static_cast<int64_t>(ids_.size()) ? ids_[i] : std::to_string(i));
        out << "\n";
        write_log_header(out);
        write_log_row(out, r);
        try {
            checkpoint().save(diagnostics_dir_ / "nan_checkpoint");
        } catch (const std::exception &) {
        }
    }
    throw NumericalError(msg.str());
}

std::vector<LossReport> Trainer::run_epochs(int count) {
    if (ids_.empty()) throw DataError("trainer has no data");
    std::vector<LossReport> reports;
    for (int k = 0; k < count && progress_.epoch < cfg_.epochs_total; ++k) {
        const int e = progress_.epoch;
        const auto stage = stage_of_epoch(e, cfg_);
        const double lr = lr_at(e, cfg_);
        for (const auto &batch : epoch_batches(e)) reports.push_back(train_step(stage, batch, lr));
        ++progress_.epoch;
    }
    return reports;
}

std::vector<LossReport> Trainer::run_stage(Stage stage) {
    const int end = stage_end(stage, cfg_);
    progress_.epoch = std::max(progress_.epoch, stage_begin(stage, cfg_));
    return run_epochs(std::max(0, end - progress_.epoch));
}

std::vector<LossReport> Trainer::run_all() { return run_epochs(cfg_.epochs_total - progress_.epoch); }

CheckpointData Trainer::checkpoint() const {
    CheckpointData c;
    c.manifest = format_progress(progress_) + train_config_to_toml(cfg_);
    collect_parameters(*generator_, "generator", c.tensors);
    collect_parameters(*discriminator_, "discriminator", c.tensors);
    save_adam_state(*opt_g_, g_params_, "adam_g", c.tensors);
    save_adam_state(*opt_d_, d_params_, "adam_d", c.tensors);
    std::ostringstream rng;
    rng << "seed " << cfg_.seed << "\nepoch " << progress_.epoch << "\nstep " << progress_.step << "\n";
    c.rng_state = rng.str();
    return c;
}

void Trainer::restore(const CheckpointData &ckpt) {
    restore_parameters(*generator_, "generator", ckpt.tensors);
    restore_parameters(*discriminator_, "discriminator", ckpt.tensors);
    load_adam_state(*opt_g_, g_params_, "adam_g", ckpt.tensors);
    load_adam_state(*opt_d_, d_params_, "adam_d", ckpt.tensors);
    const auto p = checkpoint_progress(ckpt.manifest);
    progress_.epoch = p.first;
    progress_.step = p.second;
}

Trainer Trainer::load(const fs::path &dir) {
    auto ckpt = CheckpointData::load(dir);
    Trainer t(train_config_from_toml(ckpt.manifest, (dir / "manifest.toml").string()));
    t.restore(ckpt);
    return t;
}

namespace {

CheckpointData run_one_stage(const std::vector<PairedSample> &data, const TrainConfig &cfg, const CheckpointData *start,
                             Stage stage) {
    Trainer t(cfg);
    if (start) t.restore(*start);
    t.set_data(data);
    t.run_stage(stage);
    return t.checkpoint();
}

}  // namespace

CheckpointData train_stage1(const std::vector<PairedSample> &data, const TrainConfig &cfg) {
    return run_one_stage(data, cfg, nullptr, Stage::Global);
}

CheckpointData train_stage2(const std::vector<PairedSample> &data, const TrainConfig &cfg, const CheckpointData *start) {
    return run_one_stage(data, cfg, start, Stage::Local);
}

CheckpointData train_stage3_joint(const std::vector<PairedSample> &data, const TrainConfig &cfg,
                                  const CheckpointData *start) {
    return run_one_stage(data, cfg, start, Stage::Joint);
}

}  // namespace ctsynth
