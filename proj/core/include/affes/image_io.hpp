#pragma once

#include <filesystem>

#include "affes/dataset.hpp"
#include "affes/warp.hpp"

namespace affes {

/// Binary PGM (P5, maxval 255). Pixels are quantized with round(v * 255).
void write_pgm(const std::filesystem::path& path, const Image& img);
Image read_pgm(const std::filesystem::path& path);

/// Matrix layout: header row holds axis1 values, first column axis2 values.
void write_grid_csv(const std::filesystem::path& path, const LandscapeGrid& grid,
                    const std::string& corner_label = "dv\\du");

}  // namespace affes
