#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace affes {

/// Grayscale image, row-major, pixel values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, 0.0f) {}

  float& at(int row, int col) { return pixels[static_cast<std::size_t>(row) * width + col]; }
  float at(int row, int col) const { return pixels[static_cast<std::size_t>(row) * width + col]; }
  std::size_t size() const { return pixels.size(); }

  bool operator==(const Image&) const = default;
};

struct LabeledExample {
  Image image;
  int label = 0;
  /// Stable, dataset-unique id. Keys the per-image ES state store.
  std::int64_t index = 0;
};

struct Dataset {
  std::string name;
  std::vector<LabeledExample> examples;

  std::size_t size() const { return examples.size(); }
  const LabeledExample& operator[](std::size_t i) const { return examples[i]; }
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Loads an IDX image/label file pair. Pixels are scaled by 1/255 and indices
/// are assigned 0..n-1 in file order.
///
/// Throws IoError on unreadable or truncated files, FormatError on a wrong
/// magic number and ConsistencyError when the two counts disagree.
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path);

/// Writes the dataset back as IDX. Pixels are quantized with round(v * 255),
/// so a dataset produced by load_idx round-trips bit-exactly.
void write_idx(const Dataset& ds, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

/// Deterministic Fisher-Yates shuffle by seed, then the first n examples.
/// Original indices are preserved. Throws BoundsError if n > ds.size().
Dataset subset(const Dataset& ds, std::size_t n, std::uint64_t seed);

/// Checks the Dataset invariants (non-empty, uniform dims, pixels in [0, 1],
/// labels in [0, 9], unique indices). Throws ConsistencyError.
void validate(const Dataset& ds);

}  // namespace affes
