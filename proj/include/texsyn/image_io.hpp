#pragma once

#include <string>
#include <vector>

#include "texsyn/common.hpp"

namespace texsyn {

// 8-bit RGB PNG/JPEG input, values scaled to [0,1]. Grayscale, palette and
// alpha inputs are rejected; convert upstream.
Grid<float> load_image(const std::string& path);

// Writes an 8-bit RGB PNG. `lo`/`hi` give the affine value range mapped onto
// [0, 255]; synthesized images use [-1, 1], dataset-space ones [0, 1].
void save_png(const std::string& path, const Grid<float>& image, float lo, float hi);

// All images under a directory (PNG/JPEG by extension), sorted by filename.
std::vector<Grid<float>> load_image_folder(const std::string& dir);

}  // namespace texsyn
