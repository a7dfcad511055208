#ifndef CTSYNTH_METRICS_HPP
#define CTSYNTH_METRICS_HPP

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "ctsynth/core.hpp"

namespace ctsynth {

// ---- image quality ----

inline constexpr double kPsnrCap = 100.0;

// Peak 1.0. Identical images report `cap` instead of +inf.
double psnr(const CTImage &a, const CTImage &b, double cap = kPsnrCap);
double rmse(const CTImage &a, const CTImage &b);
double mse(const CTImage &a, const CTImage &b);

struct SsimOptions {
    int64_t window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;
};

// Mean of the local SSIM map over every fully contained Gaussian window.
double ssim(const CTImage &a, const CTImage &b, const SsimOptions &opts = {});

// Normalized Gaussian window weights [window, window], float64.
torch::Tensor ssim_window(const SsimOptions &opts);

// ---- FID ----

// Symmetric PSD square root via eigendecomposition, eigenvalues clamped at zero.
torch::Tensor symmetric_sqrt(const torch::Tensor &m);

// Rows are embedding vectors ([n, d], n >= 2). Fréchet distance of the two Gaussian fits.
double fid(const torch::Tensor &feats_real, const torch::Tensor &feats_fake);

// Maps images [B,1,H,W] in [0,1] to embeddings [B, dim].
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual int64_t dim() const = 0;
    virtual torch::Tensor embed(const torch::Tensor &images) = 0;
    virtual std::string name() const = 0;
};

// Fixed-seed random convolutional network with global pooling. FID values computed with it
// are only comparable with other values from the same extractor (same seed and dim).
class RandomConvExtractor final : public FeatureExtractor {
public:
    explicit RandomConvExtractor(int64_t dim = 64, uint64_t seed = 2020);
    int64_t dim() const override { return dim_; }
    torch::Tensor embed(const torch::Tensor &images) override;
    std::string name() const override;

private:
    static torch::nn::Conv2dOptions conv_opts(int64_t in, int64_t out);

    int64_t dim_;
    uint64_t seed_;
    torch::nn::Sequential net_{nullptr};
};

// A TorchScript module taking [B,1,H,W] and returning [B, dim]; lets a pretrained classifier
// stand in for the random extractor.
class ScriptedExtractor final : public FeatureExtractor {
public:
    explicit ScriptedExtractor(const std::filesystem::path &path);
    ~ScriptedExtractor() override;
    int64_t dim() const override { return dim_; }
    torch::Tensor embed(const torch::Tensor &images) override;
    std::string name() const override { return "torchscript:" + path_.string(); }

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    std::filesystem::path path_;
    int64_t dim_ = 0;
};

// "random[:dim[:seed]]" or "torchscript:<path>".
std::unique_ptr<FeatureExtractor> make_extractor(const std::string &spec);

torch::Tensor embed(FeatureExtractor &extractor, const std::vector<CTImage> &images);

// ---- segmentation ----

struct SegScores {
    double dice = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
};

struct ConfusionCounts {
    int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

ConfusionCounts confusion(const torch::Tensor &pred, const torch::Tensor &truth);

// A term whose denominator is empty scores 1.0 when prediction and truth are both empty for
// that term (e.g. no positives anywhere for Dice and Sen, no negatives anywhere for Spec) and
// 0.0 otherwise.
SegScores scores_from_counts(const ConfusionCounts &c);
SegScores dice_sen_spec(const torch::Tensor &pred, const torch::Tensor &truth);

// ---- fold aggregation ----

struct MetricReport {
    std::vector<double> values;
    std::vector<double> fold_means;
    double mean = 0.0;
    double ci95 = 0.0;  // half-width of the Student-t interval over fold means
};

// Splits values into n_folds contiguous folds (sizes differ by at most one).
MetricReport fold_report(const std::vector<double> &values, int n_folds);

double student_t_quantile(double p, double dof);

}  // namespace ctsynth

#endif
