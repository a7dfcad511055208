#include "ctsynth/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <toml.hpp>

namespace ctsynth {

namespace {

// ---- scalar conversion ----

std::string fmt(double v) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof(buf), v);
    std::string s(buf, r.ptr);
    if (s.find_first_of(".en") == std::string::npos) s += ".0";
    return s;
}

std::string quote(const std::string &s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        out += c;
    }
    return out + "\"";
}

[[noreturn]] void type_error(const std::string &path, const char *expected) {
    throw ConfigError(path, std::string("expected ") + expected);
}

int64_t read_int(const toml::node &n, const std::string &path) {
    auto v = n.value_exact<int64_t>();
    if (!v) type_error(path, "an integer");
    return *v;
}

double read_double(const toml::node &n, const std::string &path) {
    if (auto v = n.value_exact<double>()) return *v;
    if (auto v = n.value_exact<int64_t>()) return static_cast<double>(*v);
    type_error(path, "a number");
}

bool read_bool(const toml::node &n, const std::string &path) {
    auto v = n.value_exact<bool>();
    if (!v) type_error(path, "true or false");
    return *v;
}

std::string read_string(const toml::node &n, const std::string &path) {
    auto v = n.value_exact<std::string>();
    if (!v) type_error(path, "a string");
    return *v;
}

const toml::array &read_array(const toml::node &n, const std::string &path) {
    const auto *a = n.as_array();
    if (!a) type_error(path, "an array");
    return *a;
}

template <typename E>
struct EnumNames;

template <>
struct EnumNames<GeneratorLossForm> {
    static constexpr std::pair<GeneratorLossForm, const char *> table[] = {
        {GeneratorLossForm::NonSaturating, "non_saturating"}, {GeneratorLossForm::Saturating, "saturating"}};
};
template <>
struct EnumNames<WeightNetOwner> {
    static constexpr std::pair<WeightNetOwner, const char *> table[] = {{WeightNetOwner::Generator, "generator"},
                                                                        {WeightNetOwner::Frozen, "frozen"}};
};
template <>
struct EnumNames<AlphaInput> {
    static constexpr std::pair<AlphaInput, const char *> table[] = {
        {AlphaInput::Concat, "concat"}, {AlphaInput::GlobalOnly, "global_only"}, {AlphaInput::LocalOnly, "local_only"}};
};
template <>
struct EnumNames<BetaSource> {
    static constexpr std::pair<BetaSource, const char *> table[] = {{BetaSource::D1, "d1"}, {BetaSource::D2, "d2"}};
};

// ---- field registry ----

struct Field {
    std::string path;
    std::function<void(RunConfig &, const toml::node &)> set;
    std::function<std::string(const RunConfig &)> get;
};

template <typename T>
void read_into(T &out, const toml::node &n, const std::string &path) {
    if constexpr (std::is_same_v<T, bool>) {
        out = read_bool(n, path);
    } else if constexpr (std::is_same_v<T, double>) {
        out = read_double(n, path);
    } else if constexpr (std::is_same_v<T, std::string>) {
        out = read_string(n, path);
    } else if constexpr (std::is_same_v<T, uint64_t>) {
        const auto v = read_int(n, path);
        if (v < 0) throw ConfigError(path, "must be non-negative");
        out = static_cast<uint64_t>(v);
    } else if constexpr (std::is_integral_v<T>) {
        const auto v = read_int(n, path);
        if (v < std::numeric_limits<T>::min() || v > std::numeric_limits<T>::max()) {
            throw ConfigError(path, "integer out of range");
        }
        out = static_cast<T>(v);
    } else if constexpr (std::is_same_v<T, std::optional<double>>) {
        if (auto s = n.value_exact<std::string>()) {
            if (*s != "none") type_error(path, "a number or \"none\"");
            out.reset();
        } else {
            out = read_double(n, path);
        }
    } else if constexpr (std::is_same_v<T, std::array<int, 3>>) {
        const auto &a = read_array(n, path);
        if (a.size() != 3) throw ConfigError(path, "expected an array of 3 integers");
        for (size_t i = 0; i < 3; ++i) read_into(out[i], *a.get(i), path);
    } else if constexpr (std::is_same_v<T, std::vector<std::string>> || std::is_same_v<T, std::vector<double>>) {
        const auto &a = read_array(n, path);
        T values(a.size());
        for (size_t i = 0; i < a.size(); ++i) read_into(values[i], *a.get(i), path);
        out = std::move(values);
    } else {
        const auto s = read_string(n, path);
        for (const auto &[value, name] : EnumNames<T>::table) {
            if (s == name) {
                out = value;
                return;
            }
        }
        std::string options;
        for (const auto &[value, name] : EnumNames<T>::table) options += (options.empty() ? "" : ", ") + std::string(name);
        throw ConfigError(path, "expected one of " + options);
    }
}

template <typename T>
std::string write_value(const T &v) {
    if constexpr (std::is_same_v<T, bool>) {
        return v ? "true" : "false";
    } else if constexpr (std::is_same_v<T, double>) {
        return fmt(v);
    } else if constexpr (std::is_same_v<T, std::string>) {
        return quote(v);
    } else if constexpr (std::is_integral_v<T>) {
        return std::to_string(v);
    } else if constexpr (std::is_same_v<T, std::optional<double>>) {
        return v ? fmt(*v) : quote("none");
    } else if constexpr (std::is_same_v<T, std::array<int, 3>> || std::is_same_v<T, std::vector<std::string>> ||
                         std::is_same_v<T, std::vector<double>>) {
        std::string s = "[";
        for (size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + write_value(v[i]);
        return s + "]";
    } else {
        for (const auto &[value, name] : EnumNames<T>::table) {
            if (value == v) return quote(name);
        }
        return quote("?");
    }
}

template <typename Ref>
Field field(std::string path, Ref ref) {
    Field f;
    f.path = path;
    f.set = [path, ref](RunConfig &c, const toml::node &n) { read_into(ref(c), n, path); };
    f.get = [ref](const RunConfig &c) { return write_value(ref(const_cast<RunConfig &>(c))); };
    return f;
}

#define CT_FIELD(path, member) field(path, [](RunConfig &c) -> auto & { return c.member; })

void texture_fields(std::vector<Field> &fields, const std::string &name, ClassTexture TextureParams::*cls) {
    fields.push_back(field("phantom." + name + "_mean_hu", [cls](RunConfig &c) -> auto & {
        return (c.data.phantom.texture.*cls).mean_hu;
    }));
    fields.push_back(field("phantom." + name + "_noise_hu", [cls](RunConfig &c) -> auto & {
        return (c.data.phantom.texture.*cls).noise_hu;
    }));
    fields.push_back(field("phantom." + name + "_correlation_px", [cls](RunConfig &c) -> auto & {
        return (c.data.phantom.texture.*cls).correlation_px;
    }));
}

const std::vector<Field> &registry() {
    static const std::vector<Field> fields = [] {
        std::vector<Field> f{
            CT_FIELD("data.n_train", data.n_train),
            CT_FIELD("data.n_test_synth", data.n_test_synth),
            CT_FIELD("data.n_test_seg", data.n_test_seg),
            CT_FIELD("data.aug_multiplier", data.aug_multiplier),
            CT_FIELD("data.slices_per_patient", data.slices_per_patient),
            CT_FIELD("data.seed", data.seed),
            CT_FIELD("data.manifest", data_manifest),
            CT_FIELD("phantom.n_ggo_blobs", data.phantom.n_ggo_blobs),
            CT_FIELD("phantom.n_consolidation_blobs", data.phantom.n_consolidation_blobs),
        };
        texture_fields(f, "outside", &TextureParams::outside);
        texture_fields(f, "body", &TextureParams::body);
        texture_fields(f, "lung", &TextureParams::lung);
        texture_fields(f, "ggo", &TextureParams::ground_glass);
        texture_fields(f, "consolidation", &TextureParams::consolidation);
        std::vector<Field> rest{
            CT_FIELD("augment.resize_crop", data.augment.resize_crop),
            CT_FIELD("augment.scale_min", data.augment.scale_min),
            CT_FIELD("augment.scale_max", data.augment.scale_max),
            CT_FIELD("augment.rotation", data.augment.rotation),
            CT_FIELD("augment.rotation_min_deg", data.augment.rotation_min_deg),
            CT_FIELD("augment.rotation_max_deg", data.augment.rotation_max_deg),
            CT_FIELD("augment.noise", data.augment.noise),
            CT_FIELD("augment.noise_sigma", data.augment.noise_sigma),
            CT_FIELD("augment.elastic", data.augment.elastic),
            CT_FIELD("augment.elastic_alpha_px", data.augment.elastic_alpha_px),
            CT_FIELD("augment.elastic_sigma_px", data.augment.elastic_sigma_px),

            CT_FIELD("train.epochs_total", train.epochs_total),
            CT_FIELD("train.stage_epochs", train.stage_epochs),
            CT_FIELD("train.lr", train.lr),
            CT_FIELD("train.adam_beta1", train.adam_beta1),
            CT_FIELD("train.adam_beta2", train.adam_beta2),
            CT_FIELD("train.lambda_fm", train.lambda_fm),
            CT_FIELD("train.batch_size", train.batch_size),
            CT_FIELD("train.steps_per_epoch", train.steps_per_epoch),
            CT_FIELD("train.seed", train.seed),
            CT_FIELD("train.deterministic", train.deterministic),
            CT_FIELD("train.supervise_g1_joint", train.supervise_g1_joint),
            CT_FIELD("train.g_loss", train.g_loss),
            CT_FIELD("train.alpha_owner", train.alpha_owner),
            CT_FIELD("train.beta_owner", train.beta_owner),

            CT_FIELD("generator.base_resolution", train.generator.base_resolution),
            CT_FIELD("generator.base_channels", train.generator.base_channels),
            CT_FIELD("generator.n_residual_blocks", train.generator.n_residual_blocks),
            CT_FIELD("generator.n_downsamples_g1", train.generator.n_downsamples_g1),
            CT_FIELD("generator.n_residual_blocks_local", train.generator.n_residual_blocks_local),
            CT_FIELD("generator.alpha_hidden", train.generator.alpha_hidden),
            CT_FIELD("generator.use_desum", train.generator.use_desum),
            CT_FIELD("generator.fixed_alpha", train.generator.fixed_alpha),
            CT_FIELD("generator.zero_global_feature", train.generator.zero_global_feature),
            CT_FIELD("generator.n_generators", train.generator.n_generators),
            CT_FIELD("generator.alpha_input", train.generator.alpha_input),

            CT_FIELD("discriminator.base_channels", train.discriminator.base_channels),
            CT_FIELD("discriminator.n_layers", train.discriminator.n_layers),
            CT_FIELD("discriminator.n_discriminators", train.discriminator.n_discriminators),
            CT_FIELD("discriminator.fixed_beta", train.discriminator.fixed_beta),
            CT_FIELD("discriminator.use_dfm", train.discriminator.use_dfm),
            CT_FIELD("discriminator.beta_tap", train.discriminator.beta_tap),
            CT_FIELD("discriminator.beta_source", train.discriminator.beta_source),
            CT_FIELD("discriminator.beta_hidden", train.discriminator.beta_hidden),
            CT_FIELD("discriminator.instance_norm", train.discriminator.instance_norm),

            CT_FIELD("eval.extractor", eval.extractor),
            CT_FIELD("eval.folds", eval.folds),
            CT_FIELD("eval.n_heldout", eval.n_heldout),

            CT_FIELD("seg.base_channels", seg.base_channels),
            CT_FIELD("seg.depth", seg.depth),
            CT_FIELD("seg.epochs", seg.epochs),
            CT_FIELD("seg.steps_per_epoch", seg.steps_per_epoch),
            CT_FIELD("seg.batch_size", seg.batch_size),
            CT_FIELD("seg.lr", seg.lr),
            CT_FIELD("seg.adam_beta1", seg.adam_beta1),
            CT_FIELD("seg.adam_beta2", seg.adam_beta2),
            CT_FIELD("seg.seed", seg.seed),
            CT_FIELD("seg.deterministic", seg.deterministic),
            CT_FIELD("seg.modes", seg_grid.modes),
            CT_FIELD("seg.ratios", seg_grid.ratios),
            CT_FIELD("seg.mix_seed", seg_grid.mix_seed),
            CT_FIELD("seg.synth_count", seg_grid.synth_count),
        };
        f.insert(f.end(), std::make_move_iterator(rest.begin()), std::make_move_iterator(rest.end()));
        return f;
    }();
    return fields;
}

#undef CT_FIELD

const Field *find_field(const std::string &path) {
    for (const auto &f : registry()) {
        if (f.path == path) return &f;
    }
    return nullptr;
}

std::string section_of(const std::string &path) { return path.substr(0, path.find('.')); }

toml::table parse_text(const std::string &text, const std::string &source) {
    try {
        return toml::parse(text, source);
    } catch (const toml::parse_error &e) {
        std::ostringstream msg;
        msg << e.description() << " (line " << e.source().begin.line << ")";
        throw ConfigError(source, msg.str());
    }
}

void apply_table(RunConfig &cfg, const toml::table &root, const std::set<std::string> &sections,
                 const std::set<std::string> &ignored) {
    for (const auto &[skey, snode] : root) {
        const std::string section(skey.str());
        if (ignored.count(section)) continue;
        if (!sections.count(section)) throw ConfigError(section, "unknown section");
        const auto *table = snode.as_table();
        if (!table) throw ConfigError(section, "expected a table");
        for (const auto &[key, node] : *table) {
            const auto path = section + "." + std::string(key.str());
            const auto *f = find_field(path);
            if (!f) throw ConfigError(path, "unknown field");
            f->set(cfg, node);
        }
    }
}

const std::set<std::string> kAllSections{"data", "phantom", "augment", "train", "generator", "discriminator", "eval", "seg"};
const std::set<std::string> kTrainSections{"train", "generator", "discriminator"};

std::string emit(const RunConfig &cfg, const std::set<std::string> &sections) {
    std::string out;
    std::string current;
    for (const auto &f : registry()) {
        const auto section = section_of(f.path);
        if (!sections.count(section)) continue;
        if (section != current) {
            if (!current.empty()) out += "\n";
            out += "[" + section + "]\n";
            current = section;
        }
        out += f.path.substr(section.size() + 1) + " = " + f.get(cfg) + "\n";
    }
    return out;
}

}  // namespace

void RunConfig::validate() {
    if (data.n_train < 1) throw ConfigError("data.n_train", "must be at least 1");
    if (data.n_test_synth < 0) throw ConfigError("data.n_test_synth", "must be non-negative");
    if (data.n_test_seg < 0) throw ConfigError("data.n_test_seg", "must be non-negative");
    for (int m : data.aug_multiplier) {
        if (m < 1) throw ConfigError("data.aug_multiplier", "entries must be at least 1");
    }
    if (data.slices_per_patient < 1) throw ConfigError("data.slices_per_patient", "must be at least 1");
    if (data.augment.scale_min <= 0.0 || data.augment.scale_max < data.augment.scale_min) {
        throw ConfigError("augment.scale_min", "need 0 < scale_min <= scale_max");
    }
    if (data.augment.rotation_max_deg < data.augment.rotation_min_deg) {
        throw ConfigError("augment.rotation_min_deg", "must not exceed rotation_max_deg");
    }
    if (data.augment.noise_sigma < 0.0) throw ConfigError("augment.noise_sigma", "must be non-negative");
    train.validate();
    data.size = train.generator.base_resolution;
    data.phantom.size = data.size;
    if (eval.folds < 1) throw ConfigError("eval.folds", "must be at least 1");
    if (eval.n_heldout < 0) throw ConfigError("eval.n_heldout", "must be non-negative");
    seg.validate();
    for (const auto &m : seg_grid.modes) {
        try {
            parse_mix_mode(m);
        } catch (const ConfigError &) {
            throw ConfigError("seg.modes", "expected replace or add, got " + m);
        }
    }
    for (double r : seg_grid.ratios) {
        try {
            MixSpec{MixMode::Add, r}.validate();
        } catch (const ConfigError &) {
            throw ConfigError("seg.ratios", "entries must be one of 0.0, 0.1, ..., 0.5");
        }
    }
    if (seg_grid.synth_count < 0) throw ConfigError("seg.synth_count", "must be non-negative");
}

RunConfig parse_run_config(const std::string &text, const std::string &source) {
    RunConfig cfg;
    apply_table(cfg, parse_text(text, source), kAllSections, {});
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string(), "cannot read config file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str(), path.string());
}

std::string to_toml(const RunConfig &cfg) { return emit(cfg, kAllSections); }

void apply_override(RunConfig &cfg, const std::string &assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError(assignment, "override must look like section.key=value");
    const auto path = assignment.substr(0, eq);
    const auto value = assignment.substr(eq + 1);
    const auto *f = find_field(path);
    if (!f) throw ConfigError(path, "unknown field");
    toml::table t;
    try {
        t = toml::parse("v = " + value);
    } catch (const toml::parse_error &) {
        t = toml::parse("v = " + quote(value));
    }
    f->set(cfg, *t.get("v"));
}

std::vector<std::string> config_field_names() {
    std::vector<std::string> names;
    for (const auto &f : registry()) names.push_back(f.path);
    return names;
}

std::string train_config_to_toml(const TrainConfig &cfg) {
    RunConfig run;
    run.train = cfg;
    return emit(run, kTrainSections);
}

TrainConfig train_config_from_toml(const std::string &text, const std::string &source) {
    RunConfig run;
    apply_table(run, parse_text(text, source), kTrainSections, {"progress"});
    run.train.validate();
    return run.train;
}

std::pair<int, int64_t> checkpoint_progress(const std::string &manifest) {
    auto t = parse_text(manifest, "checkpoint manifest");
    auto epoch = t["progress"]["epoch"].value<int64_t>();
    auto step = t["progress"]["step"].value<int64_t>();
    if (!epoch || !step) throw DataError("checkpoint manifest lacks [progress] epoch/step");
    return {static_cast<int>(*epoch), *step};
}

std::vector<MixSpec> mix_grid(const RunConfig &cfg) {
    std::vector<MixSpec> grid;
    for (const auto &m : cfg.seg_grid.modes) {
        for (double r : cfg.seg_grid.ratios) grid.push_back({parse_mix_mode(m), r, "ctsynth", cfg.seg_grid.mix_seed});
    }
    return grid;
}

}  // namespace ctsynth
