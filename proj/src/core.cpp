#include "ctsynth/core.hpp"

#include <cmath>

namespace ctsynth {

namespace F = torch::nn::functional;

SegMap::SegMap(torch::Tensor labels) {
    if (!labels.defined() || labels.dim() != 2) {
        throw ShapeError("SegMap expects a 2-D label tensor");
    }
    if (labels.size(0) != labels.size(1) || labels.size(0) == 0) {
        throw ShapeError("SegMap must be square and non-empty, got " + std::to_string(labels.size(0)) + "x" +
                         std::to_string(labels.size(1)));
    }
    if (labels.is_floating_point()) {
        if (!torch::equal(labels, labels.round())) {
            throw DataError("SegMap labels must be integral");
        }
    }
    auto as_long = labels.to(torch::kLong);
    if (as_long.min().item<int64_t>() < 0 || as_long.max().item<int64_t>() >= kNumClasses) {
        throw DataError("SegMap label out of range {0,1,2,3}");
    }
    labels_ = as_long.to(torch::kUInt8).contiguous();
}

SegMap SegMap::filled(int64_t size, Label label) {
    return SegMap(torch::full({size, size}, static_cast<int64_t>(label), torch::kUInt8));
}

bool SegMap::operator==(const SegMap &other) const {
    if (empty() || other.empty()) return empty() == other.empty();
    return labels_.sizes() == other.labels_.sizes() && torch::equal(labels_, other.labels_);
}

CTImage::CTImage(torch::Tensor intensities) {
    if (!intensities.defined() || intensities.dim() != 2) {
        throw ShapeError("CTImage expects a 2-D intensity tensor");
    }
    auto v = intensities.to(torch::kFloat).contiguous();
    if (!torch::isfinite(v).all().item<bool>()) {
        throw DataError("CTImage intensities must be finite");
    }
    if (v.numel() > 0 && (v.min().item<float>() < 0.0F || v.max().item<float>() > 1.0F)) {
        throw DataError("CTImage intensities must lie in [0,1]");
    }
    values_ = v;
}

CTImage CTImage::clamped(const torch::Tensor &values) {
    auto v = values.to(torch::kFloat);
    if (torch::isnan(v).any().item<bool>()) {
        throw DataError("CTImage intensities must not be NaN");
    }
    return CTImage(v.clamp(0.0, 1.0));
}

CTImage CTImage::filled(int64_t height, int64_t width, float value) {
    return CTImage(torch::full({height, width}, value, torch::kFloat));
}

bool CTImage::operator==(const CTImage &other) const {
    if (empty() || other.empty()) return empty() == other.empty();
    return values_.sizes() == other.values_.sizes() && torch::equal(values_, other.values_);
}

OneHotMap::OneHotMap(torch::Tensor planes) {
    if (!planes.defined() || planes.dim() != 3 || planes.size(0) != kNumClasses) {
        throw ShapeError("OneHotMap expects a [4,H,W] tensor");
    }
    auto p = planes.to(torch::kFloat).contiguous();
    auto binary = (p == 0.0F).logical_or(p == 1.0F).all().item<bool>();
    if (!binary || !torch::equal(p.sum(0), torch::ones({p.size(1), p.size(2)}))) {
        throw DataError("OneHotMap planes must be 0/1 and sum to one per pixel");
    }
    planes_ = p;
}

PairedSample::PairedSample(std::string id_, std::string patient, SegMap m, CTImage img)
    : id(std::move(id_)), patient_tag(std::move(patient)), map(std::move(m)), image(std::move(img)) {
    if (map.width() != image.width() || map.height() != image.height()) {
        throw ShapeError("sample " + id + ": map and image dimensions differ");
    }
}

double hu_to_unit(double hu) {
    if (!std::isfinite(hu)) throw DataError("HU value is not finite");
    return std::clamp((hu - kHuLow) / (kHuHigh - kHuLow), 0.0, 1.0);
}

CTImage hu_window(const torch::Tensor &raw_hu) {
    auto hu = raw_hu.to(torch::kDouble);
    if (!torch::isfinite(hu).all().item<bool>()) {
        throw DataError("raw HU values must be finite");
    }
    auto unit = ((hu - kHuLow) / (kHuHigh - kHuLow)).clamp(0.0, 1.0);
    return CTImage(unit.to(torch::kFloat));
}

OneHotMap encode_onehot(const SegMap &map) {
    auto planes = F::one_hot(map.labels().to(torch::kLong), kNumClasses).permute({2, 0, 1});
    return OneHotMap(planes.to(torch::kFloat));
}

SegMap argmax_labels(const OneHotMap &onehot) {
    return SegMap(onehot.planes().argmax(0).to(torch::kUInt8));
}

torch::Tensor lung_mask(const SegMap &map) { return (map.labels() > 0).to(torch::kUInt8); }

torch::Tensor infection_mask(const SegMap &map) { return (map.labels() >= 2).to(torch::kUInt8); }

torch::Tensor class_mask(const SegMap &map, Label label) {
    return (map.labels() == static_cast<int64_t>(label)).to(torch::kUInt8);
}

torch::Tensor half_resolution_images(const torch::Tensor &images) {
    if (images.size(-1) % 2 != 0 || images.size(-2) % 2 != 0) {
        throw ShapeError("half_resolution needs even width and height");
    }
    return F::avg_pool2d(images, F::AvgPool2dFuncOptions(2).stride(2));
}

torch::Tensor half_resolution_onehot(const torch::Tensor &onehot) {
    auto pooled = half_resolution_images(onehot);
    // argmax returns the first maximum; flipping the channel axis sends ties to the higher class id.
    auto idx = (kNumClasses - 1) - pooled.flip({1}).argmax(1);
    return F::one_hot(idx, kNumClasses).permute({0, 3, 1, 2}).to(onehot.dtype());
}

CTImage half_resolution(const CTImage &image) {
    auto x = image.values().unsqueeze(0).unsqueeze(0);
    return CTImage::clamped(half_resolution_images(x).squeeze(0).squeeze(0));
}

OneHotMap half_resolution(const OneHotMap &onehot) {
    return OneHotMap(half_resolution_onehot(onehot.planes().unsqueeze(0)).squeeze(0));
}

CTImage resize_image(const CTImage &image, int64_t size, Interpolation interp) {
    if (size <= 0) throw ShapeError("resize target must be positive");
    auto x = image.values().unsqueeze(0).unsqueeze(0);
    auto opts = F::InterpolateFuncOptions().size(std::vector<int64_t>{size, size});
    switch (interp) {
    case Interpolation::Nearest:
        opts = opts.mode(torch::kNearest);
        break;
    case Interpolation::Bilinear:
        opts = opts.mode(torch::kBilinear).align_corners(false);
        break;
    case Interpolation::Bicubic:
        opts = opts.mode(torch::kBicubic).align_corners(false);
        break;
    }
    return CTImage::clamped(F::interpolate(x, opts).squeeze(0).squeeze(0));
}

SegMap resize_map(const SegMap &map, int64_t size) {
    auto x = map.labels().to(torch::kFloat).unsqueeze(0).unsqueeze(0);
    auto opts = F::InterpolateFuncOptions().size(std::vector<int64_t>{size, size}).mode(torch::kNearest);
    return SegMap(F::interpolate(x, opts).squeeze(0).squeeze(0).to(torch::kUInt8));
}

torch::Tensor onehot_batch(const torch::Tensor &labels) {
    return F::one_hot(labels.to(torch::kLong), kNumClasses).permute({0, 3, 1, 2}).to(torch::kFloat).contiguous();
}

torch::Tensor stack_onehot(std::span<const PairedSample> samples) {
    std::vector<torch::Tensor> labels;
    labels.reserve(samples.size());
    for (const auto &s : samples) labels.push_back(s.map.labels());
    return onehot_batch(torch::stack(labels));
}

torch::Tensor stack_images(std::span<const PairedSample> samples) {
    std::vector<torch::Tensor> images;
    images.reserve(samples.size());
    for (const auto &s : samples) images.push_back(s.image.values());
    return torch::stack(images).unsqueeze(1).contiguous();
}

}  // namespace ctsynth
