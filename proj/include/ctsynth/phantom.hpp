#ifndef CTSYNTH_PHANTOM_HPP
#define CTSYNTH_PHANTOM_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ctsynth/core.hpp"
#include "ctsynth/image_io.hpp"

namespace ctsynth {

// Texture of one tissue class: mean level in HU plus spatially correlated noise.
struct ClassTexture {
    double mean_hu = 0.0;
    double noise_hu = 0.0;
    double correlation_px = 1.0;  // Gaussian smoothing sigma of the noise field
};

struct TextureParams {
    ClassTexture outside{-580.0, 15.0, 1.0};
    ClassTexture body{60.0, 40.0, 1.5};
    ClassTexture lung{-450.0, 60.0, 1.0};
    ClassTexture ground_glass{-120.0, 70.0, 2.0};
    ClassTexture consolidation{320.0, 60.0, 2.5};
};

struct PhantomSpec {
    uint64_t seed = 0;
    int64_t size = 64;
    int n_ggo_blobs = 2;
    int n_consolidation_blobs = 1;
    TextureParams texture{};
};

struct Phantom {
    PairedSample sample;
    int placed_ggo = 0;
    int placed_consolidation = 0;
    std::vector<std::string> warnings;
};

// Two elliptical lungs inside an elliptical body, with GGO and consolidation blobs
// placed inside the lungs. Bitwise deterministic in the spec.
Phantom make_phantom(const PhantomSpec &spec);

struct AugmentConfig {
    bool resize_crop = true;
    double scale_min = 1.0;
    double scale_max = 1.25;

    bool rotation = true;
    double rotation_min_deg = -15.0;
    double rotation_max_deg = 15.0;

    bool noise = true;
    double noise_sigma = 0.01;

    bool elastic = true;
    double elastic_alpha_px = 2.0;   // displacement amplitude
    double elastic_sigma_px = 4.0;   // smoothing scale of the displacement field

    uint64_t seed = 0;
};

// Applies one random geometric transform to map (nearest) and image (bilinear), then
// noise to the image only. Disabled transforms are exact identities.
PairedSample augment(const PairedSample &sample, const AugmentConfig &cfg);

// ---- dataset organisation ----

enum class Split { TrainSynthesis, TestSynthesis, TestSegmentation };
std::string split_name(Split split);

struct DatasetPlan {
    int n_train = 8;
    int n_test_synth = 4;
    int n_test_seg = 4;
    std::array<int, 3> aug_multiplier{1, 1, 1};  // per split, in Split order
    int slices_per_patient = 4;
    int64_t size = 64;
    uint64_t seed = 0;
    PhantomSpec phantom{};  // seed and size are overridden per sample
    AugmentConfig augment{};
};

struct DatasetEntry {
    std::string id;         // unique within the dataset
    std::string source_id;  // original (pre-augmentation) sample
    std::string patient_tag;
    Split split = Split::TrainSynthesis;
    int aug_index = 0;      // 0 is the un-augmented original
    uint64_t phantom_seed = 0;
    uint64_t augment_seed = 0;
};

struct DatasetManifest {
    DatasetPlan plan;
    std::vector<DatasetEntry> entries;

    std::vector<DatasetEntry> split(Split s) const;
};

DatasetManifest build_dataset(const DatasetPlan &plan);

// Regenerates the sample an entry describes.
PairedSample materialize(const DatasetManifest &manifest, const DatasetEntry &entry);
std::vector<PairedSample> materialize_split(const DatasetManifest &manifest, Split split);

// Writes <out>/<split>/<id>_map.png + <id>_image.png and one manifest file per split.
// Returns the manifest paths in Split order.
std::vector<std::filesystem::path> write_dataset(const DatasetManifest &manifest, const std::filesystem::path &out);

// Segmentation experiments train on the synthesis test split and evaluate on the
// synthesis training split (the roles swap relative to synthesis).
struct SegmentationRoles {
    Split train_real = Split::TestSynthesis;
    Split evaluation = Split::TrainSynthesis;
};

}  // namespace ctsynth

#endif
