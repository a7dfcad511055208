#ifndef CTSYNTH_TESTS_FIXTURES_HPP
#define CTSYNTH_TESTS_FIXTURES_HPP

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ctsynth/phantom.hpp"
#include "ctsynth/trainer.hpp"

namespace fixture {

// A trainer configuration small enough for unit tests at base 64.
inline ctsynth::TrainConfig tiny_train(int epochs = 3, int steps = 2) {
    ctsynth::TrainConfig c;
    c.epochs_total = epochs;
    c.stage_epochs = {1, 1, epochs - 2};
    c.steps_per_epoch = steps;
    c.batch_size = 2;
    c.seed = 7;
    c.generator.base_resolution = 64;
    c.generator.base_channels = 8;
    c.generator.n_residual_blocks = 2;
    c.generator.n_residual_blocks_local = 1;
    c.generator.alpha_hidden = 8;
    c.discriminator.base_channels = 8;
    c.discriminator.beta_hidden = 8;
    return c;
}

inline std::vector<ctsynth::PairedSample> phantoms(int n, int64_t size = 64, uint64_t seed = 0) {
    std::vector<ctsynth::PairedSample> out;
    for (int i = 0; i < n; ++i) {
        ctsynth::PhantomSpec spec;
        spec.seed = seed * 1000 + static_cast<uint64_t>(i);
        spec.size = size;
        auto p = ctsynth::make_phantom(spec);
        out.emplace_back("p" + std::to_string(i), "t" + std::to_string(i), p.sample.map, p.sample.image);
    }
    return out;
}

inline std::filesystem::path scratch(const std::string &name) {
    auto p = std::filesystem::temp_directory_path() / ("ctsynth_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline std::string read_bytes(const std::filesystem::path &p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Relative path → file bytes for every regular file under a directory.
inline std::map<std::string, std::string> snapshot(const std::filesystem::path &dir) {
    std::map<std::string, std::string> out;
    for (const auto &e : std::filesystem::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) out[std::filesystem::relative(e.path(), dir).string()] = read_bytes(e.path());
    }
    return out;
}

inline bool same_values(const std::vector<std::pair<std::string, torch::Tensor>> &a,
                        const std::vector<std::pair<std::string, torch::Tensor>> &b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i].first != b[i].first || !torch::equal(a[i].second, b[i].second)) return false;
    }
    return true;
}

inline std::vector<std::pair<std::string, torch::Tensor>> clone_params(
    const std::vector<std::pair<std::string, torch::Tensor>> &p) {
    std::vector<std::pair<std::string, torch::Tensor>> out;
    for (const auto &[n, t] : p) out.emplace_back(n, t.detach().clone());
    return out;
}

}  // namespace fixture

#endif
