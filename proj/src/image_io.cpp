#include "ctsynth/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

namespace ctsynth {

namespace {

struct FileCloser {
    void operator()(std::FILE *f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct RawGray {
    int64_t width = 0;
    int64_t height = 0;
    int bit_depth = 8;
    std::vector<uint16_t> pixels;
};

// Decodes to raw gray sample values. Palette images keep their palette indices.
RawGray read_raw_png(const std::filesystem::path &path, bool keep_palette_indices) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw DataError("cannot open " + path.string());
    png_byte sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
        throw DataError(path.string() + " is not a PNG file");
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info) throw DataError("libpng initialisation failed");
    RawGray out;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("corrupt PNG: " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const auto color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) {
        if (!keep_palette_indices) png_set_palette_to_rgb(png);
        if (depth < 8) png_set_packing(png);
    } else if (color == PNG_COLOR_TYPE_GRAY && depth < 8) {
        png_set_expand_gray_1_2_4_to_8(png);
    }
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if ((color & PNG_COLOR_MASK_COLOR) && !(color == PNG_COLOR_TYPE_PALETTE && keep_palette_indices)) {
        png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    }
    if (depth == 16) png_set_swap(png);  // host little-endian samples
    png_read_update_info(png, info);

    out.width = png_get_image_width(png, info);
    out.height = png_get_image_height(png, info);
    out.bit_depth = png_get_bit_depth(png, info);
    const auto channels = png_get_channels(png, info);
    const auto rowbytes = png_get_rowbytes(png, info);
    std::vector<png_byte> buffer(rowbytes * out.height);
    std::vector<png_bytep> rows(out.height);
    for (int64_t y = 0; y < out.height; ++y) rows[y] = buffer.data() + y * rowbytes;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);

    out.pixels.resize(out.width * out.height);
    for (int64_t y = 0; y < out.height; ++y) {
        for (int64_t x = 0; x < out.width; ++x) {
            if (out.bit_depth == 16) {
                uint16_t v;
                std::memcpy(&v, rows[y] + 2 * (x * channels), 2);
                out.pixels[y * out.width + x] = v;
            } else {
                out.pixels[y * out.width + x] = rows[y][x * channels];
            }
        }
    }
    return out;
}

void write_raw_png(const std::filesystem::path &path, int64_t width, int64_t height, int bit_depth,
                   const std::vector<uint16_t> &pixels) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw DataError("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info) throw DataError("libpng initialisation failed");
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("PNG encoding failed: " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const int bytes = bit_depth == 16 ? 2 : 1;
    std::vector<png_byte> row(width * bytes);
    for (int64_t y = 0; y < height; ++y) {
        for (int64_t x = 0; x < width; ++x) {
            const uint16_t v = pixels[y * width + x];
            if (bytes == 2) {
                row[2 * x] = static_cast<png_byte>(v >> 8);  // PNG is big-endian
                row[2 * x + 1] = static_cast<png_byte>(v & 0xFF);
            } else {
                row[x] = static_cast<png_byte>(v);
            }
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

std::string trim(const std::string &s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

CTImage read_image_png(const std::filesystem::path &path) {
    const auto raw = read_raw_png(path, false);
    const float scale = raw.bit_depth == 16 ? 65535.0F : 255.0F;
    auto t = torch::empty({raw.height, raw.width}, torch::kFloat);
    auto *dst = t.data_ptr<float>();
    for (size_t i = 0; i < raw.pixels.size(); ++i) dst[i] = static_cast<float>(raw.pixels[i]) / scale;
    return CTImage(t);
}

void write_image_png(const std::filesystem::path &path, const CTImage &image, int bit_depth) {
    if (bit_depth != 8 && bit_depth != 16) throw DataError("image PNG bit depth must be 8 or 16");
    const double peak = bit_depth == 16 ? 65535.0 : 255.0;
    auto values = image.values().contiguous();
    const auto *src = values.data_ptr<float>();
    std::vector<uint16_t> pixels(values.numel());
    for (size_t i = 0; i < pixels.size(); ++i) {
        pixels[i] = static_cast<uint16_t>(std::lround(static_cast<double>(src[i]) * peak));
    }
    write_raw_png(path, image.width(), image.height(), bit_depth, pixels);
}

SegMap read_map_png(const std::filesystem::path &path) {
    const auto raw = read_raw_png(path, true);
    if (raw.bit_depth != 8) throw DataError(path.string() + ": label maps must be 8-bit");
    auto t = torch::empty({raw.height, raw.width}, torch::kUInt8);
    auto *dst = t.data_ptr<uint8_t>();
    for (size_t i = 0; i < raw.pixels.size(); ++i) {
        if (raw.pixels[i] >= kNumClasses) {
            throw DataError(path.string() + ": label value " + std::to_string(raw.pixels[i]) + " out of range");
        }
        dst[i] = static_cast<uint8_t>(raw.pixels[i]);
    }
    return SegMap(t);
}

void write_map_png(const std::filesystem::path &path, const SegMap &map) {
    auto labels = map.labels().contiguous();
    const auto *src = labels.data_ptr<uint8_t>();
    std::vector<uint16_t> pixels(src, src + labels.numel());
    write_raw_png(path, map.width(), map.height(), 8, pixels);
}

void write_grid_png(const std::filesystem::path &path, const std::vector<CTImage> &tiles, int columns) {
    if (tiles.empty() || columns <= 0) throw DataError("image grid needs at least one tile");
    const auto h = tiles.front().height();
    const auto w = tiles.front().width();
    const int64_t rows = (static_cast<int64_t>(tiles.size()) + columns - 1) / columns;
    auto canvas = torch::zeros({rows * h, columns * w}, torch::kFloat);
    for (size_t i = 0; i < tiles.size(); ++i) {
        if (tiles[i].height() != h || tiles[i].width() != w) throw ShapeError("grid tiles must share dimensions");
        const int64_t r = static_cast<int64_t>(i) / columns;
        const int64_t c = static_cast<int64_t>(i) % columns;
        canvas.slice(0, r * h, (r + 1) * h).slice(1, c * w, (c + 1) * w).copy_(tiles[i].values());
    }
    write_image_png(path, CTImage(canvas), 8);
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest " + path.string());
    const auto base = path.parent_path();
    std::vector<ManifestEntry> entries;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        std::vector<std::string> fields;
        std::stringstream ss(t);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(trim(field));
        if (fields.size() != 4) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 4 comma-separated fields");
        }
        auto resolve = [&](const std::string &p) {
            std::filesystem::path fp(p);
            return fp.is_absolute() ? fp : base / fp;
        };
        entries.push_back({fields[0], resolve(fields[1]), resolve(fields[2]), fields[3]});
    }
    return entries;
}

void write_manifest(const std::filesystem::path &path, const std::vector<ManifestEntry> &entries) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write manifest " + path.string());
    const auto base = path.parent_path();
    auto rel = [&](const std::filesystem::path &p) {
        return p.is_absolute() && !base.empty() ? std::filesystem::relative(p, std::filesystem::absolute(base)) : p;
    };
    for (const auto &e : entries) {
        out << e.id << ", " << rel(e.map_path).generic_string() << ", " << rel(e.image_path).generic_string() << ", "
            << e.patient_tag << '\n';
    }
}

PairedSample load_pair(const ManifestEntry &entry) {
    return PairedSample(entry.id, entry.patient_tag, read_map_png(entry.map_path), read_image_png(entry.image_path));
}

}  // namespace ctsynth
