#ifndef CTSYNTH_IMAGE_IO_HPP
#define CTSYNTH_IMAGE_IO_HPP

#include <filesystem>
#include <string>
#include <vector>

#include "ctsynth/core.hpp"

namespace ctsynth {

// Grayscale PNG. 8-bit files scale by 1/255, 16-bit by 1/65535.
CTImage read_image_png(const std::filesystem::path &path);
void write_image_png(const std::filesystem::path &path, const CTImage &image, int bit_depth = 16);

// Label maps are 8-bit grayscale or paletted PNGs whose raw values are {0,1,2,3}.
SegMap read_map_png(const std::filesystem::path &path);
void write_map_png(const std::filesystem::path &path, const SegMap &map);

// Writes several same-sized images side by side, `columns` per row.
void write_grid_png(const std::filesystem::path &path, const std::vector<CTImage> &tiles, int columns);

// One line per pair: `id, map_path, image_path, patient_tag`. Blank lines and lines
// starting with '#' are skipped. Relative paths resolve against the manifest's directory.
struct ManifestEntry {
    std::string id;
    std::filesystem::path map_path;
    std::filesystem::path image_path;
    std::string patient_tag;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path &path);
void write_manifest(const std::filesystem::path &path, const std::vector<ManifestEntry> &entries);

PairedSample load_pair(const ManifestEntry &entry);

}  // namespace ctsynth

#endif
