#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "cli.hpp"
#include "ctsynth/config.hpp"
#include "fixtures.hpp"

using namespace ctsynth;

namespace {

std::string field_of(const std::function<void()> &f) {
    try {
        f();
    } catch (const ConfigError &e) {
        return e.field();
    }
    return "";
}

int cli(const std::vector<std::string> &args, std::string *out_text = nullptr, std::string *err_text = nullptr) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    if (out_text) *out_text = out.str();
    if (err_text) *err_text = err.str();
    return code;
}

}  // namespace

TEST(RunConfigToml, RoundTripsDefaultsAndEdits) {
    RunConfig c;
    c.validate();
    const auto text = to_toml(c);
    EXPECT_EQ(to_toml(parse_run_config(text)), text);

    c.train.lr = 1e-3;
    c.train.stage_epochs = {2, 2, 4};
    c.train.epochs_total = 8;
    c.train.generator.fixed_alpha = 0.25;
    c.seg_grid.ratios = {0.0, 0.3};
    c.eval.extractor = "random:32:1";
    c.validate();
    const auto edited = to_toml(c);
    auto back = parse_run_config(edited);
    EXPECT_EQ(to_toml(back), edited);
    EXPECT_EQ(back.train.lr, 1e-3);
    EXPECT_EQ(back.train.stage_epochs, (std::array<int, 3>{2, 2, 4}));
    EXPECT_EQ(back.seg_grid.ratios, (std::vector<double>{0.0, 0.3}));
}

TEST(RunConfigToml, PartialFileKeepsDefaults) {
    auto c = parse_run_config("[train]\nlr = 0.001\n");
    RunConfig d;
    EXPECT_EQ(c.train.lr, 0.001);
    EXPECT_EQ(c.train.batch_size, d.train.batch_size);
    EXPECT_EQ(c.eval.folds, d.eval.folds);
}

TEST(RunConfigToml, ErrorsNameTheField) {
    EXPECT_EQ(field_of([] { parse_run_config("[bogus]\nx = 1\n"); }), "bogus");
    EXPECT_EQ(field_of([] { parse_run_config("[train]\nlearning_rate = 1\n"); }), "train.learning_rate");
    EXPECT_EQ(field_of([] { parse_run_config("[train]\nbatch_size = \"four\"\n"); }), "train.batch_size");
    EXPECT_EQ(field_of([] { parse_run_config("[eval]\nfolds = 0\n").validate(); }), "eval.folds");
    EXPECT_EQ(field_of([] { parse_run_config("[seg]\nratios = [0.7]\n").validate(); }), "seg.ratios");
    EXPECT_EQ(field_of([] { parse_run_config("[train]\nstage_epochs = [1, 2]\n"); }), "train.stage_epochs");
    EXPECT_THROW(parse_run_config("[train\n"), ConfigError);
}

TEST(RunConfigToml, EveryFieldIsWritten) {
    const auto text = to_toml(RunConfig{});
    for (const auto &name : config_field_names()) {
        const auto key = name.substr(name.find('.') + 1);
        EXPECT_NE(text.find(key + " = "), std::string::npos) << name;
    }
}

TEST(Override, SetsFieldsAndRejectsUnknown) {
    RunConfig c;
    apply_override(c, "train.lr=0.005");
    apply_override(c, "generator.use_desum=false");
    apply_override(c, "eval.extractor=random:16:3");
    apply_override(c, "train.stage_epochs=[1,1,2]");
    EXPECT_EQ(c.train.lr, 0.005);
    EXPECT_FALSE(c.train.generator.use_desum);
    EXPECT_EQ(c.eval.extractor, "random:16:3");
    EXPECT_EQ(c.train.stage_epochs, (std::array<int, 3>{1, 1, 2}));
    EXPECT_EQ(field_of([&] { apply_override(c, "train.nope=1"); }), "train.nope");
    EXPECT_THROW(apply_override(c, "train.lr"), ConfigError);
}

TEST(TrainConfigToml, RoundTripAndProgress) {
    auto t = fixture::tiny_train(4, 3);
    t.lambda_fm = 3.5;
    const auto text = train_config_to_toml(t);
    EXPECT_EQ(train_config_to_toml(train_config_from_toml(text)), text);
    EXPECT_EQ(checkpoint_progress("[progress]\nepoch = 2\nstep = 17\n\n" + text), (std::pair<int, int64_t>{2, 17}));
    EXPECT_THROW(checkpoint_progress(text), DataError);
}

TEST(MixGrid, ModesTimesRatios) {
    RunConfig c;
    auto grid = mix_grid(c);
    EXPECT_EQ(grid.size(), c.seg_grid.modes.size() * c.seg_grid.ratios.size());
    std::set<std::pair<int, double>> seen;
    for (const auto &s : grid) seen.insert({static_cast<int>(s.mode), s.ratio});
    EXPECT_EQ(seen.size(), grid.size());
}

TEST(Cli, HelpAndUsageErrors) {
    std::string out, err;
    EXPECT_EQ(cli({"--help"}, &out), kExitOk);
    EXPECT_NE(out.find("train"), std::string::npos);
    EXPECT_EQ(cli({"train", "--help"}, &out), kExitOk);
    EXPECT_NE(out.find("--stage"), std::string::npos);
    EXPECT_EQ(cli({}), kExitUsage);
    EXPECT_EQ(cli({"train", "--bogus", "--out", "x"}), kExitUsage);
    EXPECT_EQ(cli({"train", "--stage", "4", "--out", "x"}), kExitUsage);
    EXPECT_EQ(cli({"train", "--config", "/nonexistent/file.toml", "--out", "x"}), kExitUsage);
}

TEST(Cli, InvalidFieldIsNamed) {
    const auto dir = fixture::scratch("cli_bad_field");
    std::string err;
    EXPECT_EQ(cli({"train", "--out", dir.string(), "--set", "train.lambda_fm=-1"}, nullptr, &err), kExitData);
    EXPECT_NE(err.find("train.lambda_fm"), std::string::npos) << err;
    EXPECT_EQ(cli({"phantom", "--out", dir.string(), "--set", "data.colour=1"}, nullptr, &err), kExitData);
    EXPECT_NE(err.find("data.colour"), std::string::npos) << err;
}

TEST(Cli, PhantomWritesManifests) {
    const auto dir = fixture::scratch("cli_phantom");
    std::string out;
    ASSERT_EQ(cli({"phantom", "--out", dir.string(), "--set", "data.n_train=2", "--set", "data.n_test_synth=1", "--set",
                   "data.n_test_seg=1", "--set", "data.aug_multiplier=[1,1,1]", "--set", "generator.base_resolution=64"},
                  &out),
              kExitOk);
    EXPECT_TRUE(std::filesystem::exists(dir / "config.resolved"));
    EXPECT_TRUE(std::filesystem::exists(dir / "images" / "preview.png"));
    EXPECT_NE(out.find(".txt"), std::string::npos);
}

TEST(Ablation, ElevenRows) {
    RunConfig base;
    auto rows = ablation_rows(base);
    std::vector<std::string> names;
    for (const auto &r : rows) names.push_back(r.name);
    EXPECT_EQ(names, (std::vector<std::string>{"ours", "w/o DESUM", "using F_global", "fixed alpha=0.5", "w/o DFM",
                                               "using D2^i", "fixed beta=0.5", "D=1", "D=3", "G=1", "G=3"}));
    EXPECT_TRUE(rows[1].config.train.generator.use_desum == false);
    EXPECT_EQ(rows[7].config.train.discriminator.n_discriminators, 1);
    EXPECT_EQ(rows[10].config.train.generator.n_generators, 3);
    EXPECT_EQ(to_toml(rows[0].config), to_toml([&] {
                  RunConfig c = base;
                  c.validate();
                  return c;
              }()));
}
