#include "ctsynth/synthesis.hpp"

#include <fstream>

#include "ctsynth/config.hpp"
#include "ctsynth/image_io.hpp"
#include "ctsynth/metrics.hpp"

namespace ctsynth {

namespace fs = std::filesystem;

Generator load_generator(const CheckpointData &ckpt) {
    auto cfg = train_config_from_toml(ckpt.manifest, "checkpoint manifest");
    Generator g(cfg.generator);
    restore_parameters(*g, "generator", ckpt.tensors);
    g->eval();
    return g;
}

Generator load_generator(const fs::path &dir) { return load_generator(CheckpointData::load(dir)); }

std::vector<CTImage> synthesize(const std::vector<SegMap> &maps, Generator &g) {
    if (maps.empty()) return {};
    const auto res = g->config().base_resolution;
    std::vector<torch::Tensor> planes;
    for (const auto &m : maps) {
        if (m.width() != res || m.height() != res) {
            throw ShapeError("synthesize: map is " + std::to_string(m.width()) + "px, generator expects " +
                             std::to_string(res));
        }
        planes.push_back(encode_onehot(m).planes());
    }
    torch::NoGradGuard ng;
    auto out = g->forward(torch::stack(planes)).image;
    std::vector<CTImage> images;
    for (int64_t i = 0; i < out.size(0); ++i) images.push_back(CTImage::clamped(out[i][0].contiguous()));
    return images;
}

CTImage synthesize(const SegMap &map, Generator &g) { return synthesize(std::vector<SegMap>{map}, g).front(); }

CTImage composite(const CTImage &lung_image, const CTImage &reference, const SegMap &map) {
    if (lung_image.values().sizes() != reference.values().sizes() || lung_image.width() != map.width() ||
        lung_image.height() != map.height()) {
        throw ShapeError("composite: image, reference and map dims differ");
    }
    auto mask = lung_mask(map).to(torch::kBool);
    return CTImage(torch::where(mask, lung_image.values(), reference.values()));
}

CTImage lung_only(const CTImage &image, const SegMap &map) {
    if (image.width() != map.width() || image.height() != map.height()) throw ShapeError("lung_only: dims differ");
    return composite(image, CTImage::filled(image.height(), image.width(), 0.0f), map);
}

BatchSynthesisResult batch_synthesize(const fs::path &manifest, Generator &g, const fs::path &out_dir) {
    const auto entries = read_manifest(manifest);
    fs::create_directories(out_dir);
    BatchSynthesisResult result;
    result.index = out_dir / "index.csv";
    std::ofstream index(result.index);
    if (!index) throw DataError("cannot write " + result.index.string());
    index << "id,composite,lung_only\n";
    for (const auto &e : entries) {
        try {
            auto pair = load_pair(e);
            auto synth = synthesize(pair.map, g);
            const std::string comp = e.id + "_composite.png";
            const std::string lung = e.id + "_lung.png";
            write_image_png(out_dir / comp, composite(synth, pair.image, pair.map));
            write_image_png(out_dir / lung, lung_only(synth, pair.map));
            index << e.id << "," << comp << "," << lung << "\n";
            ++result.written;
        } catch (const std::exception &ex) {
            result.failures.push_back(e.id + ": " + ex.what());
        }
    }
    return result;
}

double mean_lung_psnr(Generator &g, const std::vector<PairedSample> &samples) {
    if (samples.empty()) throw DataError("mean_lung_psnr: no samples");
    std::vector<SegMap> maps;
    for (const auto &s : samples) maps.push_back(s.map);
    auto synth = synthesize(maps, g);
    double total = 0.0;
    for (size_t i = 0; i < samples.size(); ++i) {
        total += psnr(lung_only(synth[i], samples[i].map), lung_only(samples[i].image, samples[i].map));
    }
    return total / static_cast<double>(samples.size());
}

}  // namespace ctsynth
