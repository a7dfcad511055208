#ifndef CTSYNTH_SYNTHESIS_HPP
#define CTSYNTH_SYNTHESIS_HPP

#include <filesystem>
#include <string>
#include <vector>

#include "ctsynth/checkpoint.hpp"
#include "ctsynth/core.hpp"
#include "ctsynth/generator.hpp"

namespace ctsynth {

// Rebuilds the generator stored in a checkpoint directory (or in-memory checkpoint).
Generator load_generator(const CheckpointData &ckpt);
Generator load_generator(const std::filesystem::path &dir);

// Full-resolution generator output for one map, clamped to [0,1].
CTImage synthesize(const SegMap &map, Generator &g);
std::vector<CTImage> synthesize(const std::vector<SegMap> &maps, Generator &g);

// Synthesized pixels inside the lung region, reference pixels elsewhere.
CTImage composite(const CTImage &lung_image, const CTImage &reference, const SegMap &map);

// Image masked to the lung region, zero elsewhere.
CTImage lung_only(const CTImage &image, const SegMap &map);

struct BatchSynthesisResult {
    std::filesystem::path index;  // CSV: id,composite,lung_only
    int written = 0;
    std::vector<std::string> failures;  // "id: reason"
};

// One composited PNG and one lung-only PNG per manifest entry, plus an index file.
BatchSynthesisResult batch_synthesize(const std::filesystem::path &manifest, Generator &g,
                                      const std::filesystem::path &out_dir);

// Mean lung-only PSNR between synthesized and real images.
double mean_lung_psnr(Generator &g, const std::vector<PairedSample> &samples);

}  // namespace ctsynth

#endif
