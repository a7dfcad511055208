#include "ctsynth/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ctsynth/core.hpp"

namespace ctsynth {

namespace fs = std::filesystem;

namespace {

constexpr std::array<char, 4> kMagic{'C', 'T', 'A', '1'};

template <typename T>
void put_le(std::ostream &os, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::array<unsigned char, sizeof(T)> bytes{};
    std::memcpy(bytes.data(), &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    os.write(reinterpret_cast<const char *>(bytes.data()), sizeof(T));
}

template <typename T>
T get_le(std::istream &is) {
    std::array<unsigned char, sizeof(T)> bytes{};
    is.read(reinterpret_cast<char *>(bytes.data()), sizeof(T));
    if (!is) throw DataError("array file truncated");
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    T v;
    std::memcpy(&v, bytes.data(), sizeof(T));
    return v;
}

std::string read_file(const fs::path &p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DataError("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path &p, const std::string &content) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw DataError("cannot write " + p.string());
    out << content;
}

}  // namespace

void write_array(const fs::path &path, const torch::Tensor &t) {
    auto data = t.detach().to(torch::kFloat).contiguous().cpu();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(kMagic.data(), kMagic.size());
    put_le<uint32_t>(out, static_cast<uint32_t>(data.dim()));
    for (auto d : data.sizes()) put_le<int64_t>(out, d);
    const auto *p = data.data_ptr<float>();
    for (int64_t i = 0; i < data.numel(); ++i) put_le<float>(out, p[i]);
}

torch::Tensor read_array(const fs::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    std::array<char, 4> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kMagic) throw DataError(path.string() + ": not an array file");
    const auto rank = get_le<uint32_t>(in);
    if (rank > 8) throw DataError(path.string() + ": implausible rank");
    std::vector<int64_t> dims(rank);
    for (auto &d : dims) {
        d = get_le<int64_t>(in);
        if (d < 0) throw DataError(path.string() + ": negative dimension");
    }
    auto t = torch::empty(dims, torch::kFloat);
    auto *p = t.data_ptr<float>();
    for (int64_t i = 0; i < t.numel(); ++i) p[i] = get_le<float>(in);
    return t;
}

void CheckpointData::save(const fs::path &dir) const {
    fs::create_directories(dir / "arrays");
    write_file(dir / "manifest.toml", manifest);
    for (const auto &[name, t] : tensors) write_array(dir / "arrays" / (name + ".f32"), t);
    write_file(dir / "rng.txt", rng_state);
}

CheckpointData CheckpointData::load(const fs::path &dir) {
    if (!fs::is_directory(dir)) throw DataError("checkpoint directory not found: " + dir.string());
    CheckpointData c;
    c.manifest = read_file(dir / "manifest.toml");
    if (fs::exists(dir / "rng.txt")) c.rng_state = read_file(dir / "rng.txt");
    std::vector<fs::path> files;
    for (const auto &e : fs::directory_iterator(dir / "arrays")) {
        if (e.path().extension() == ".f32") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto &f : files) c.tensors.emplace(f.stem().string(), read_array(f));
    return c;
}

void collect_parameters(const torch::nn::Module &module, const std::string &prefix,
                        std::map<std::string, torch::Tensor> &out) {
    for (const auto &p : module.named_parameters()) out[prefix + "." + p.key()] = p.value().detach().clone();
}

void restore_parameters(torch::nn::Module &module, const std::string &prefix,
                        const std::map<std::string, torch::Tensor> &in) {
    torch::NoGradGuard no_grad;
    for (auto &p : module.named_parameters()) {
        const auto name = prefix + "." + p.key();
        auto it = in.find(name);
        if (it == in.end()) throw DataError("checkpoint is missing parameter " + name);
        if (it->second.sizes() != p.value().sizes()) throw ShapeError("checkpoint parameter " + name + " has wrong shape");
        p.value().copy_(it->second);
    }
}

}  // namespace ctsynth
