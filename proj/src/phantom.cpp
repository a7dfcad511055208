#include "ctsynth/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "ctsynth/seeding.hpp"

namespace ctsynth {

namespace F = torch::nn::functional;

namespace {

torch::Tensor gaussian_kernel_1d(double sigma) {
    const int64_t radius = std::max<int64_t>(1, static_cast<int64_t>(std::ceil(3.0 * sigma)));
    auto k = torch::empty({2 * radius + 1}, torch::kDouble);
    auto acc = k.accessor<double, 1>();
    for (int64_t i = -radius; i <= radius; ++i) acc[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    return k / k.sum();
}

// Separable Gaussian blur of a [H,W] double field with reflect padding.
torch::Tensor gaussian_blur(const torch::Tensor &field, double sigma) {
    if (sigma <= 0.0) return field;
    auto k = gaussian_kernel_1d(sigma);
    const int64_t r = (k.size(0) - 1) / 2;
    auto x = field.unsqueeze(0).unsqueeze(0);
    x = F::pad(x, F::PadFuncOptions({r, r, r, r}).mode(torch::kReflect));
    x = F::conv2d(x, k.view({1, 1, 1, -1}));
    x = F::conv2d(x, k.view({1, 1, -1, 1}));
    return x.squeeze(0).squeeze(0);
}

torch::Tensor white_noise(std::mt19937_64 &rng, int64_t h, int64_t w) {
    std::normal_distribution<double> normal(0.0, 1.0);
    auto t = torch::empty({h, w}, torch::kDouble);
    auto *p = t.data_ptr<double>();
    for (int64_t i = 0; i < h * w; ++i) p[i] = normal(rng);
    return t;
}

// Smoothed white noise rescaled to unit variance. Separable kernel k gives variance (sum k^2)^2.
torch::Tensor correlated_noise(std::mt19937_64 &rng, int64_t size, double sigma) {
    auto noise = white_noise(rng, size, size);
    if (sigma <= 0.0) return noise;
    const double k2 = gaussian_kernel_1d(sigma).pow(2).sum().item<double>();
    return gaussian_blur(noise, sigma) / k2;
}

struct Ellipse {
    double cx, cy, ax, ay;
    bool contains(double x, double y) const {
        const double dx = (x - cx) / ax;
        const double dy = (y - cy) / ay;
        return dx * dx + dy * dy <= 1.0;
    }
};

double uniform(std::mt19937_64 &rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace

Phantom make_phantom(const PhantomSpec &spec) {
    if (spec.size < 32) throw DataError("phantom size must be at least 32");
    if (spec.n_ggo_blobs < 0 || spec.n_consolidation_blobs < 0) throw DataError("blob counts must be non-negative");
    const int64_t n = spec.size;
    const double s = static_cast<double>(n);
    std::mt19937_64 rng(spec.seed);

    const Ellipse body{s / 2 + uniform(rng, -0.01, 0.01) * s, s / 2 + uniform(rng, -0.01, 0.01) * s,
                       0.46 * s * uniform(rng, 0.97, 1.0), 0.40 * s * uniform(rng, 0.97, 1.0)};
    std::array<Ellipse, 2> lungs{};
    for (int side = 0; side < 2; ++side) {
        const double sign = side == 0 ? -1.0 : 1.0;
        lungs[side] = Ellipse{body.cx + sign * 0.19 * s * uniform(rng, 0.95, 1.05),
                              body.cy + uniform(rng, -0.03, 0.03) * s, 0.13 * s * uniform(rng, 0.9, 1.1),
                              0.26 * s * uniform(rng, 0.9, 1.1)};
    }

    auto labels = torch::zeros({n, n}, torch::kUInt8);
    auto inside_body = torch::zeros({n, n}, torch::kBool);
    {
        auto lab = labels.accessor<uint8_t, 2>();
        auto bod = inside_body.accessor<bool, 2>();
        for (int64_t y = 0; y < n; ++y) {
            for (int64_t x = 0; x < n; ++x) {
                const double px = x + 0.5;
                const double py = y + 0.5;
                bod[y][x] = body.contains(px, py);
                if (lungs[0].contains(px, py) || lungs[1].contains(px, py)) lab[y][x] = 1;
            }
        }
    }

    Phantom result;
    auto lab = labels.accessor<uint8_t, 2>();
    auto place_blobs = [&](int requested, uint8_t label, double rmin, double rmax, const char *name) {
        int placed = 0;
        for (int b = 0; b < requested; ++b) {
            bool ok = false;
            for (int attempt = 0; attempt < 50 && !ok; ++attempt) {
                const double cx = uniform(rng, 0.0, s);
                const double cy = uniform(rng, 0.0, s);
                const double r = uniform(rng, rmin, rmax) * s;
                const auto ix = static_cast<int64_t>(cx);
                const auto iy = static_cast<int64_t>(cy);
                // the blob centre must sit on plain lung so blobs stay inside the lungs and separate
                if (lab[iy][ix] != 1) continue;
                for (int64_t y = std::max<int64_t>(0, iy - static_cast<int64_t>(r) - 1);
                     y <= std::min<int64_t>(n - 1, iy + static_cast<int64_t>(r) + 1); ++y) {
                    for (int64_t x = std::max<int64_t>(0, ix - static_cast<int64_t>(r) - 1);
                         x <= std::min<int64_t>(n - 1, ix + static_cast<int64_t>(r) + 1); ++x) {
                        const double dx = x + 0.5 - cx;
                        const double dy = y + 0.5 - cy;
                        if (dx * dx + dy * dy <= r * r && lab[y][x] >= 1) lab[y][x] = label;
                    }
                }
                ok = true;
            }
            if (ok) {
                ++placed;
            } else {
                result.warnings.push_back(std::string("could not fit ") + name + " blob " + std::to_string(b + 1) +
                                          " of " + std::to_string(requested) + "; count reduced");
                break;
            }
        }
        return placed;
    };
    result.placed_ggo = place_blobs(spec.n_ggo_blobs, 2, 0.035, 0.08, "ground-glass");
    result.placed_consolidation = place_blobs(spec.n_consolidation_blobs, 3, 0.03, 0.06, "consolidation");

    const auto &tex = spec.texture;
    const std::array<const ClassTexture *, 5> textures{&tex.outside, &tex.body, &tex.lung, &tex.ground_glass,
                                                       &tex.consolidation};
    std::array<torch::Tensor, 5> fields;
    for (size_t i = 0; i < textures.size(); ++i) {
        fields[i] = textures[i]->mean_hu + textures[i]->noise_hu * correlated_noise(rng, n, textures[i]->correlation_px);
    }
    auto lab_long = labels.to(torch::kLong);
    auto hu = torch::where(inside_body, fields[1], fields[0]);
    hu = torch::where(lab_long == 1, fields[2], hu);
    hu = torch::where(lab_long == 2, fields[3], hu);
    hu = torch::where(lab_long == 3, fields[4], hu);

    result.sample = PairedSample("phantom-" + std::to_string(spec.seed), "", SegMap(labels), hu_window(hu));
    return result;
}

PairedSample augment(const PairedSample &sample, const AugmentConfig &cfg) {
    const bool geometric = cfg.resize_crop || cfg.rotation || cfg.elastic;
    if (!geometric && !cfg.noise) return sample;
    if (cfg.resize_crop && (cfg.scale_min <= 0.0 || cfg.scale_max < cfg.scale_min)) {
        throw DataError("augment: invalid scale range");
    }
    if (cfg.rotation && cfg.rotation_max_deg < cfg.rotation_min_deg) throw DataError("augment: invalid rotation range");

    std::mt19937_64 rng(cfg.seed);
    const int64_t h = sample.map.height();
    const int64_t w = sample.map.width();
    SegMap map = sample.map;
    torch::Tensor image = sample.image.values();

    if (geometric) {
        const double angle =
            cfg.rotation ? uniform(rng, cfg.rotation_min_deg, cfg.rotation_max_deg) * std::numbers::pi / 180.0 : 0.0;
        torch::Tensor displacement;
        if (cfg.elastic) {
            auto dx = gaussian_blur(white_noise(rng, h, w), cfg.elastic_sigma_px);
            auto dy = gaussian_blur(white_noise(rng, h, w), cfg.elastic_sigma_px);
            auto norm = [&](const torch::Tensor &d) {
                const double sd = d.std().item<double>();
                return sd > 0.0 ? d / sd : d;
            };
            // pixels → normalized grid units
            displacement = torch::stack({norm(dx) * (2.0 / w), norm(dy) * (2.0 / h)}, -1) * cfg.elastic_alpha_px;
        }
        const auto in_lung = lung_mask(sample.map).sum().item<int64_t>();

        auto warp = [&](bool crop, double scale, double tx, double ty) {
            const double c = std::cos(angle);
            const double sn = std::sin(angle);
            const double inv = crop ? 1.0 / scale : 1.0;
            auto theta = torch::tensor({{c * inv, -sn * inv, crop ? tx : 0.0}, {sn * inv, c * inv, crop ? ty : 0.0}},
                                       torch::kDouble)
                             .unsqueeze(0);
            auto grid = F::affine_grid(theta, {1, 1, h, w}, false);
            if (displacement.defined()) grid = grid + displacement.unsqueeze(0);
            auto sample_with = [&](const torch::Tensor &src, bool nearest) {
                auto opts = F::GridSampleFuncOptions().padding_mode(torch::kBorder).align_corners(false);
                if (nearest) {
                    opts = opts.mode(torch::kNearest);
                } else {
                    opts = opts.mode(torch::kBilinear);
                }
                return F::grid_sample(src.to(torch::kDouble).unsqueeze(0).unsqueeze(0), grid, opts).squeeze(0).squeeze(0);
            };
            auto warped_map = sample_with(sample.map.labels(), true).round().to(torch::kUInt8);
            auto warped_image = sample_with(sample.image.values(), false).to(torch::kFloat);
            return std::pair{SegMap(warped_map), warped_image};
        };

        bool done = false;
        for (int attempt = 0; attempt < 10 && !done; ++attempt) {
            double scale = 1.0, tx = 0.0, ty = 0.0;
            if (cfg.resize_crop) {
                scale = uniform(rng, cfg.scale_min, cfg.scale_max);
                const double slack = std::max(0.0, 1.0 - 1.0 / scale);
                tx = uniform(rng, -slack, slack);
                ty = uniform(rng, -slack, slack);
            }
            auto [m, img] = warp(cfg.resize_crop, scale, tx, ty);
            if (in_lung == 0 || lung_mask(m).sum().item<int64_t>() > 0) {
                map = std::move(m);
                image = img;
                done = true;
            } else if (!cfg.resize_crop) {
                break;
            }
        }
        if (!done) {
            auto [m, img] = warp(false, 1.0, 0.0, 0.0);
            map = std::move(m);
            image = img;
        }
    }

    if (cfg.noise && cfg.noise_sigma > 0.0) {
        image = (image.to(torch::kDouble) + cfg.noise_sigma * white_noise(rng, h, w)).to(torch::kFloat);
    }
    return PairedSample(sample.id, sample.patient_tag, std::move(map), CTImage::clamped(image));
}

std::string split_name(Split split) {
    switch (split) {
    case Split::TrainSynthesis:
        return "train_synthesis";
    case Split::TestSynthesis:
        return "test_synthesis";
    case Split::TestSegmentation:
        return "test_segmentation";
    }
    return "unknown";
}

std::vector<DatasetEntry> DatasetManifest::split(Split s) const {
    std::vector<DatasetEntry> out;
    for (const auto &e : entries) {
        if (e.split == s) out.push_back(e);
    }
    return out;
}

DatasetManifest build_dataset(const DatasetPlan &plan) {
    if (plan.n_train < 1 || plan.n_test_synth < 1 || plan.n_test_seg < 1) {
        throw DataError("dataset split counts must be at least 1");
    }
    for (int m : plan.aug_multiplier) {
        if (m < 1) throw DataError("augmentation multiplier must be at least 1");
    }
    if (plan.slices_per_patient < 1) throw DataError("slices_per_patient must be at least 1");

    DatasetManifest manifest{plan, {}};
    const std::array<std::pair<Split, int>, 3> splits{std::pair{Split::TrainSynthesis, plan.n_train},
                                                       std::pair{Split::TestSynthesis, plan.n_test_synth},
                                                       std::pair{Split::TestSegmentation, plan.n_test_seg}};
    int64_t original = 0;
    int64_t patient = 0;
    for (size_t si = 0; si < splits.size(); ++si) {
        const auto [split, count] = splits[si];
        const int mult = plan.aug_multiplier[si];
        for (int i = 0; i < count; ++i, ++original) {
            // patients never straddle splits
            if (i % plan.slices_per_patient == 0 && i > 0) ++patient;
            char source[32];
            std::snprintf(source, sizeof source, "s%05lld", static_cast<long long>(original));
            char tag[32];
            std::snprintf(tag, sizeof tag, "patient%04lld", static_cast<long long>(patient));
            const uint64_t phantom_seed = derive_seed(plan.seed, static_cast<uint64_t>(original), 0x5048414eULL);
            for (int k = 0; k < mult; ++k) {
                DatasetEntry e;
                e.source_id = source;
                e.id = mult == 1 ? std::string(source) : std::string(source) + "_a" + std::to_string(k);
                e.patient_tag = tag;
                e.split = split;
                e.aug_index = k;
                e.phantom_seed = phantom_seed;
                e.augment_seed = derive_seed(plan.seed, static_cast<uint64_t>(original), static_cast<uint64_t>(k));
                manifest.entries.push_back(std::move(e));
            }
        }
        ++patient;
    }
    return manifest;
}

PairedSample materialize(const DatasetManifest &manifest, const DatasetEntry &entry) {
    PhantomSpec spec = manifest.plan.phantom;
    spec.seed = entry.phantom_seed;
    spec.size = manifest.plan.size;
    auto phantom = make_phantom(spec);
    PairedSample base(entry.id, entry.patient_tag, std::move(phantom.sample.map), std::move(phantom.sample.image));
    if (entry.aug_index == 0) return base;
    AugmentConfig cfg = manifest.plan.augment;
    cfg.seed = entry.augment_seed;
    return augment(base, cfg);
}

std::vector<PairedSample> materialize_split(const DatasetManifest &manifest, Split split) {
    std::vector<PairedSample> out;
    for (const auto &e : manifest.entries) {
        if (e.split == split) out.push_back(materialize(manifest, e));
    }
    return out;
}

std::vector<std::filesystem::path> write_dataset(const DatasetManifest &manifest, const std::filesystem::path &out) {
    std::vector<std::filesystem::path> paths;
    for (Split split : {Split::TrainSynthesis, Split::TestSynthesis, Split::TestSegmentation}) {
        const auto name = split_name(split);
        std::vector<ManifestEntry> rows;
        for (const auto &e : manifest.entries) {
            if (e.split != split) continue;
            const auto sample = materialize(manifest, e);
            const std::filesystem::path map_rel = std::filesystem::path(name) / (e.id + "_map.png");
            const std::filesystem::path img_rel = std::filesystem::path(name) / (e.id + "_image.png");
            write_map_png(out / map_rel, sample.map);
            write_image_png(out / img_rel, sample.image);
            rows.push_back({e.id, map_rel, img_rel, e.patient_tag});
        }
        const auto manifest_path = out / (name + ".txt");
        write_manifest(manifest_path, rows);
        paths.push_back(manifest_path);
    }
    return paths;
}

}  // namespace ctsynth
