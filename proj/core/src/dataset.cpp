#include "affes/dataset.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "affes/errors.hpp"
#include "affes/random.hpp"

namespace affes {
namespace {

std::uint32_t read_be_u32(std::istream& in, const std::filesystem::path& path) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), 4);
  if (!in) throw IoError("truncated IDX header in " + path.string());
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) |
         (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

void write_be_u32(std::ostream& out, std::uint32_t v) {
  const std::array<unsigned char, 4> b{static_cast<unsigned char>(v >> 24),
                                       static_cast<unsigned char>(v >> 16),
                                       static_cast<unsigned char>(v >> 8),
                                       static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b.data()), 4);
}

std::ifstream open_for_read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

void expect_magic(std::uint32_t got, std::uint32_t want, const std::filesystem::path& path) {
  if (got != want) {
    std::ostringstream msg;
    msg << "bad IDX magic in " << path.string() << ": got 0x" << std::hex << got
        << ", expected 0x" << want;
    throw FormatError(msg.str());
  }
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path) {
  std::ifstream images = open_for_read(images_path);
  std::ifstream labels = open_for_read(labels_path);

  expect_magic(read_be_u32(images, images_path), kIdxImagesMagic, images_path);
  const std::uint32_t count = read_be_u32(images, images_path);
  const std::uint32_t rows = read_be_u32(images, images_path);
  const std::uint32_t cols = read_be_u32(images, images_path);

  expect_magic(read_be_u32(labels, labels_path), kIdxLabelsMagic, labels_path);
  const std::uint32_t label_count = read_be_u32(labels, labels_path);

  if (label_count != count) {
    std::ostringstream msg;
    msg << "image/label count mismatch: " << count << " images vs " << label_count
        << " labels";
    throw ConsistencyError(msg.str());
  }
  if (count == 0 || rows == 0 || cols == 0) {
    throw FormatError("empty IDX file " + images_path.string());
  }

  Dataset ds;
  ds.name = images_path.stem().string();
  ds.examples.reserve(count);

  const std::size_t pixel_count = std::size_t{rows} * cols;
  std::vector<unsigned char> raw(pixel_count);
  for (std::uint32_t i = 0; i < count; ++i) {
    images.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(pixel_count));
    if (!images) throw IoError("truncated image data in " + images_path.string());
    char label = 0;
    labels.read(&label, 1);
    if (!labels) throw IoError("truncated label data in " + labels_path.string());

    LabeledExample ex;
    ex.image = Image(static_cast<int>(rows), static_cast<int>(cols));
    for (std::size_t p = 0; p < pixel_count; ++p) {
      ex.image.pixels[p] = static_cast<float>(raw[p]) / 255.0f;
    }
    ex.label = static_cast<unsigned char>(label);
    ex.index = i;
    if (ex.label > 9) {
      throw FormatError("label out of range [0, 9] at position " + std::to_string(i));
    }
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

void write_idx(const Dataset& ds, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
  validate(ds);
  std::ofstream images(images_path, std::ios::binary);
  std::ofstream labels(labels_path, std::ios::binary);
  if (!images) throw IoError("cannot write " + images_path.string());
  if (!labels) throw IoError("cannot write " + labels_path.string());

  const auto n = static_cast<std::uint32_t>(ds.size());
  write_be_u32(images, kIdxImagesMagic);
  write_be_u32(images, n);
  write_be_u32(images, static_cast<std::uint32_t>(ds[0].image.height));
  write_be_u32(images, static_cast<std::uint32_t>(ds[0].image.width));
  write_be_u32(labels, kIdxLabelsMagic);
  write_be_u32(labels, n);

  std::vector<unsigned char> raw;
  for (const auto& ex : ds.examples) {
    raw.resize(ex.image.size());
    for (std::size_t p = 0; p < raw.size(); ++p) {
      raw[p] = static_cast<unsigned char>(std::lround(ex.image.pixels[p] * 255.0f));
    }
    images.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    const char label = static_cast<char>(ex.label);
    labels.write(&label, 1);
  }
  if (!images || !labels) throw IoError("write failed for " + images_path.string());
}

Dataset subset(const Dataset& ds, std::size_t n, std::uint64_t seed) {
  if (n > ds.size()) {
    throw BoundsError("subset of " + std::to_string(n) + " requested from dataset of " +
                      std::to_string(ds.size()));
  }
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng.below(i)]);
  }

  Dataset out;
  out.name = ds.name;
  out.examples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.examples.push_back(ds.examples[order[i]]);
  return out;
}

void validate(const Dataset& ds) {
  if (ds.examples.empty()) throw ConsistencyError("dataset '" + ds.name + "' is empty");
  const int h = ds[0].image.height;
  const int w = ds[0].image.width;
  std::unordered_set<std::int64_t> seen;
  for (const auto& ex : ds.examples) {
    if (ex.image.height != h || ex.image.width != w) {
      throw ConsistencyError("mixed image sizes in dataset '" + ds.name + "'");
    }
    if (ex.image.size() != static_cast<std::size_t>(h) * w) {
      throw ConsistencyError("pixel buffer does not match image dims");
    }
    for (float p : ex.image.pixels) {
      if (!(p >= 0.0f && p <= 1.0f)) throw ConsistencyError("pixel outside [0, 1]");
    }
    if (ex.label < 0 || ex.label > 9) throw ConsistencyError("label outside [0, 9]");
    if (!seen.insert(ex.index).second) {
      throw ConsistencyError("duplicate example index " + std::to_string(ex.index));
    }
  }
}

}  // namespace affes
