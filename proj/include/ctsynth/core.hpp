#ifndef CTSYNTH_CORE_HPP
#define CTSYNTH_CORE_HPP

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace ctsynth {

inline constexpr int64_t kNumClasses = 4;

// HU window the intensities are normalized from.
inline constexpr double kHuLow = -600.0;
inline constexpr double kHuHigh = 1500.0;

enum class Label : uint8_t {
    Background = 0,
    Lung = 1,
    GroundGlass = 2,
    Consolidation = 3,
};

// ----------------------------------------------------------
// Error kinds. The CLI maps these onto exit codes.
// ----------------------------------------------------------
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    ConfigError(std::string field, const std::string &what)
        : std::runtime_error(field + ": " + what), field_(std::move(field)) {}
    const std::string &field() const { return field_; }

private:
    std::string field_;
};

struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Square per-pixel class map. Storage is a uint8 [H, W] tensor with values in {0,1,2,3}.
class SegMap {
public:
    SegMap() = default;
    explicit SegMap(torch::Tensor labels);

    static SegMap filled(int64_t size, Label label);

    int64_t width() const { return labels_.size(1); }
    int64_t height() const { return labels_.size(0); }
    bool empty() const { return !labels_.defined(); }
    uint8_t at(int64_t y, int64_t x) const { return labels_.accessor<uint8_t, 2>()[y][x]; }
    const torch::Tensor &labels() const { return labels_; }

    bool operator==(const SegMap &other) const;

private:
    torch::Tensor labels_;
};

// Single-channel float32 [H, W] image with every value in [0, 1].
class CTImage {
public:
    CTImage() = default;
    explicit CTImage(torch::Tensor intensities);

    // Clamps into [0, 1] instead of rejecting out-of-range values (NaN is still rejected).
    static CTImage clamped(const torch::Tensor &values);
    static CTImage filled(int64_t height, int64_t width, float value);

    int64_t width() const { return values_.size(1); }
    int64_t height() const { return values_.size(0); }
    bool empty() const { return !values_.defined(); }
    float at(int64_t y, int64_t x) const { return values_.accessor<float, 2>()[y][x]; }
    const torch::Tensor &values() const { return values_; }

    bool operator==(const CTImage &other) const;

private:
    torch::Tensor values_;
};

// Four indicator planes, float32 [4, H, W], summing to one at every pixel.
class OneHotMap {
public:
    OneHotMap() = default;
    explicit OneHotMap(torch::Tensor planes);

    int64_t width() const { return planes_.size(2); }
    int64_t height() const { return planes_.size(1); }
    const torch::Tensor &planes() const { return planes_; }

private:
    torch::Tensor planes_;
};

struct PairedSample {
    std::string id;
    std::string patient_tag;
    SegMap map;
    CTImage image;

    PairedSample() = default;
    PairedSample(std::string id, std::string patient_tag, SegMap map, CTImage image);
};

// ---- windowing and encoding ----

double hu_to_unit(double hu);
CTImage hu_window(const torch::Tensor &raw_hu);

OneHotMap encode_onehot(const SegMap &map);
SegMap argmax_labels(const OneHotMap &onehot);

// Binary mask (uint8 [H, W]) of lung, GGO and consolidation pixels.
torch::Tensor lung_mask(const SegMap &map);
// Binary mask of GGO and consolidation pixels.
torch::Tensor infection_mask(const SegMap &map);
torch::Tensor class_mask(const SegMap &map, Label label);

// ---- resolution changes ----

CTImage half_resolution(const CTImage &image);
OneHotMap half_resolution(const OneHotMap &onehot);

// Batched forms used inside the networks: images [B,1,H,W], one-hot maps [B,4,H,W].
torch::Tensor half_resolution_images(const torch::Tensor &images);
torch::Tensor half_resolution_onehot(const torch::Tensor &onehot);

enum class Interpolation { Nearest, Bilinear, Bicubic };

CTImage resize_image(const CTImage &image, int64_t size, Interpolation interp = Interpolation::Bilinear);
SegMap resize_map(const SegMap &map, int64_t size);

// ---- batching ----

torch::Tensor stack_onehot(std::span<const PairedSample> samples);
torch::Tensor stack_images(std::span<const PairedSample> samples);
torch::Tensor onehot_batch(const torch::Tensor &labels);  // [B,H,W] integer → [B,4,H,W]

}  // namespace ctsynth

#endif
