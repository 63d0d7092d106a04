#pragma once

// Dataset ingestion and the in-painting protocol: IDX image files (plain or
// gzip-compressed), quantization to categorical states, random square
// patch removal, the masked-pixel MSE, and binary PGM images.

#include <zlib.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dlt/error.hpp"
#include "dlt/inference.hpp"
#include "dlt/rng.hpp"
#include "dlt/sampling.hpp"

namespace dlt {

struct ImageSet {
  std::size_t count = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;  // count * height * width, row-major per image

  std::span<const std::uint8_t> image(std::size_t i) const {
    return {pixels.data() + i * height * width, height * width};
  }
  Extent extent() const { return {height, width}; }
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

namespace detail {

inline std::string read_all(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw Error(ErrorCode::Io, "cannot open " + path);
  std::string data;
  char buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof buf)) > 0) data.append(buf, static_cast<std::size_t>(n));
  const bool failed = n < 0;
  gzclose(f);
  if (failed) throw Error(ErrorCode::TruncatedFile, path + ": corrupt compressed stream");
  return data;
}

inline std::uint32_t read_be32(std::string_view bytes, std::size_t at, const std::string& what) {
  if (bytes.size() < at + 4) {
    throw Error(ErrorCode::TruncatedFile, what + ": header ends at byte " + std::to_string(bytes.size()) +
                                              ", expected at least " + std::to_string(at + 4));
  }
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<std::uint8_t>(bytes[at + i]);
  return v;
}

inline void put_be32(std::string& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<char>((v >> s) & 0xff));
}

}  // namespace detail

/// Parses an IDX image container from memory.
inline ImageSet parse_idx(std::string_view bytes, const std::string& what = "idx") {
  const std::uint32_t magic = detail::read_be32(bytes, 0, what);
  if (magic == kIdxLabelMagic) {
    throw Error(ErrorCode::BadMagic, what + ": label file (magic 0x00000801) where images are required");
  }
  if (magic != kIdxImageMagic) {
    std::ostringstream os;
    os << what << ": unexpected magic 0x" << std::hex << magic;
    throw Error(ErrorCode::BadMagic, os.str());
  }
  ImageSet set;
  set.count = detail::read_be32(bytes, 4, what);
  set.height = detail::read_be32(bytes, 8, what);
  set.width = detail::read_be32(bytes, 12, what);
  const std::size_t need = 16 + set.count * set.height * set.width;
  if (bytes.size() < need) {
    throw Error(ErrorCode::TruncatedFile, what + ": pixel data ends at byte " + std::to_string(bytes.size()) +
                                              ", expected " + std::to_string(need));
  }
  set.pixels.assign(bytes.begin() + 16, bytes.begin() + static_cast<std::ptrdiff_t>(need));
  return set;
}

inline ImageSet load_idx(const std::string& path) { return parse_idx(detail::read_all(path), path); }

/// Label files are accepted and skipped; returns the label count.
inline std::size_t count_idx_labels(const std::string& path) {
  const std::string bytes = detail::read_all(path);
  if (detail::read_be32(bytes, 0, path) != kIdxLabelMagic) throw Error(ErrorCode::BadMagic, path + ": not a label file");
  const std::size_t n = detail::read_be32(bytes, 4, path);
  if (bytes.size() < 8 + n) throw Error(ErrorCode::TruncatedFile, path + ": label data truncated");
  return n;
}

inline std::string encode_idx(const ImageSet& set) {
  std::string out;
  detail::put_be32(out, kIdxImageMagic);
  detail::put_be32(out, static_cast<std::uint32_t>(set.count));
  detail::put_be32(out, static_cast<std::uint32_t>(set.height));
  detail::put_be32(out, static_cast<std::uint32_t>(set.width));
  out.append(set.pixels.begin(), set.pixels.end());
  return out;
}

/// First `count` images starting at `first`.
inline ImageSet slice(const ImageSet& set, std::size_t first, std::size_t count) {
  first = std::min(first, set.count);
  count = std::min(count, set.count - first);
  ImageSet out{count, set.height, set.width, {}};
  const std::size_t n = set.height * set.width;
  out.pixels.assign(set.pixels.begin() + static_cast<std::ptrdiff_t>(first * n),
                    set.pixels.begin() + static_cast<std::ptrdiff_t>((first + count) * n));
  return out;
}

using StateGrid = std::vector<std::int32_t>;

/// levels = 2: state = (byte >= 128).  Otherwise levels must be a power of
/// two up to 256 and state = byte / (256 / levels).
inline std::int32_t quantize_byte(std::uint8_t byte, std::size_t levels) {
  if (levels == 2) return byte >= 128 ? 1 : 0;
  return static_cast<std::int32_t>(byte / (256 / levels));
}

inline void check_levels(std::size_t levels) {
  if (levels < 2 || levels > 256 || (levels & (levels - 1)) != 0) {
    throw Error(ErrorCode::UnsupportedLevels, std::to_string(levels) + " levels (need a power of two in [2, 256])");
  }
}

inline std::vector<StateGrid> quantize(const ImageSet& images, std::size_t levels) {
  check_levels(levels);
  std::vector<StateGrid> grids(images.count);
  for (std::size_t i = 0; i < images.count; ++i) {
    const auto img = images.image(i);
    grids[i].resize(img.size());
    for (std::size_t t = 0; t < img.size(); ++t) grids[i][t] = quantize_byte(img[t], levels);
  }
  return grids;
}

inline ObservationGrid fully_observed(const StateGrid& grid, const Extent& extent) { return {extent, grid}; }

struct CorruptionMask {
  std::size_t row = 0;
  std::size_t col = 0;
  std::size_t size = 12;

  bool contains(std::size_t r, std::size_t c) const {
    return r >= row && r < row + size && c >= col && c < col + size;
  }
  bool operator==(const CorruptionMask&) const = default;
};

inline ObservationGrid apply_mask(const StateGrid& grid, const Extent& extent, const CorruptionMask& mask) {
  ObservationGrid obs{extent, grid};
  const std::size_t width = extent[1];
  for (std::size_t t = 0; t < grid.size(); ++t)
    if (mask.contains(t / width, t % width)) obs.states[t] = ObservationGrid::kMissing;
  return obs;
}

/// Removes one uniformly placed patch x patch square per image.
inline std::pair<std::vector<ObservationGrid>, std::vector<CorruptionMask>> corrupt(const std::vector<StateGrid>& grids,
                                                                                     const Extent& extent, Rng& rng,
                                                                                     std::size_t patch = 12) {
  if (extent.size() != 2 || extent[0] < patch || extent[1] < patch) {
    throw Error(ErrorCode::ImageTooSmall, "image " + format_extent(extent) + " cannot hold a " +
                                              std::to_string(patch) + "x" + std::to_string(patch) + " patch");
  }
  std::vector<ObservationGrid> observed;
  std::vector<CorruptionMask> masks;
  observed.reserve(grids.size());
  masks.reserve(grids.size());
  for (const auto& grid : grids) {
    CorruptionMask m;
    m.row = uniform_index(rng, extent[0] - patch + 1);
    m.col = uniform_index(rng, extent[1] - patch + 1);
    m.size = patch;
    observed.push_back(apply_mask(grid, extent, m));
    masks.push_back(m);
  }
  return {std::move(observed), std::move(masks)};
}

/// Squared error on the [0, 1] intensity scale, pooled over every masked
/// pixel of every image.
inline double mse_missing(const std::vector<StateGrid>& truth, const std::vector<StateGrid>& completed,
                          const std::vector<CorruptionMask>& masks, const Extent& extent, std::size_t levels,
                          std::vector<double>* per_image = nullptr) {
  if (truth.size() != completed.size() || truth.size() != masks.size()) {
    throw Error(ErrorCode::ShapeMismatch, "truth, completion and mask counts differ");
  }
  const double scale = 1.0 / static_cast<double>(levels - 1);
  double total = 0.0;
  std::size_t n = 0;
  if (per_image) per_image->clear();
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i].size() != completed[i].size() || truth[i].size() != volume(extent)) {
      throw Error(ErrorCode::ShapeMismatch, "image " + std::to_string(i) + " has the wrong size");
    }
    double image_total = 0.0;
    std::size_t image_n = 0;
    for (std::size_t t = 0; t < truth[i].size(); ++t) {
      if (!masks[i].contains(t / extent[1], t % extent[1])) continue;
      const double d = (truth[i][t] - completed[i][t]) * scale;
      image_total += d * d;
      ++image_n;
    }
    total += image_total;
    n += image_n;
    if (per_image) per_image->push_back(image_n ? image_total / static_cast<double>(image_n) : 0.0);
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

inline std::string masks_to_csv(const std::vector<CorruptionMask>& masks) {
  std::string out = "image_index,patch_row,patch_col,patch_size\n";
  for (std::size_t i = 0; i < masks.size(); ++i) {
    out += std::to_string(i) + ',' + std::to_string(masks[i].row) + ',' + std::to_string(masks[i].col) + ',' +
           std::to_string(masks[i].size) + '\n';
  }
  return out;
}

inline std::vector<CorruptionMask> masks_from_csv(std::string_view text) {
  std::vector<CorruptionMask> masks;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line.starts_with("image_index")) continue;
    std::istringstream row(line);
    std::size_t index, r, c, s;
    char c1, c2, c3;
    if (!(row >> index >> c1 >> r >> c2 >> c >> c3 >> s) || c1 != ',' || c2 != ',' || c3 != ',' ||
        index != masks.size()) {
      throw Error(ErrorCode::MalformedHeader, "mask file line " + std::to_string(lineno) + " is malformed");
    }
    masks.push_back({r, c, s});
  }
  return masks;
}

/// Binary P5 graymap, maxval 255, intensity round(p * 255).
inline std::string write_pgm(const Image& img) {
  std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.reserve(out.size() + img.pixels.size());
  for (double p : img.pixels) {
    const double v = std::round(std::clamp(p, 0.0, 1.0) * 255.0);
    out.push_back(static_cast<char>(static_cast<std::uint8_t>(v)));
  }
  return out;
}

inline Image read_pgm(std::string_view bytes) {
  std::size_t pos = 0;
  auto fail = [&](const std::string& what) -> Error {
    return Error(ErrorCode::MalformedHeader, "PGM byte " + std::to_string(pos) + ": " + what);
  };
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&] {
    skip_space();
    std::size_t v = 0;
    const std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) v = v * 10 + (bytes[pos++] - '0');
    if (pos == start) throw fail("expected a number");
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw fail("missing P5 magic");
  pos = 2;
  Image img;
  img.width = number();
  img.height = number();
  if (number() != 255) throw fail("only maxval 255 is supported");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) throw fail("header not terminated");
  ++pos;
  const std::size_t n = img.width * img.height;
  if (bytes.size() - pos < n) {
    throw Error(ErrorCode::TruncatedFile, "PGM pixel data ends at byte " + std::to_string(bytes.size()) +
                                              ", expected " + std::to_string(pos + n));
  }
  img.pixels.resize(n);
  for (std::size_t i = 0; i < n; ++i) img.pixels[i] = static_cast<std::uint8_t>(bytes[pos + i]) / 255.0;
  return img;
}

/// Images of equal size laid out on a grid with a one-pixel mid-grey border.
inline Image tile_images(const std::vector<Image>& tiles, std::size_t columns) {
  if (tiles.empty()) return {};
  columns = std::max<std::size_t>(1, std::min(columns, tiles.size()));
  const std::size_t rows = (tiles.size() + columns - 1) / columns;
  const std::size_t h = tiles[0].height, w = tiles[0].width;
  Image sheet;
  sheet.height = rows * (h + 1) + 1;
  sheet.width = columns * (w + 1) + 1;
  sheet.pixels.assign(sheet.height * sheet.width, 0.5);
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const std::size_t r0 = (i / columns) * (h + 1) + 1, c0 = (i % columns) * (w + 1) + 1;
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) sheet.pixels[(r0 + r) * sheet.width + c0 + c] = tiles[i].pixels[r * w + c];
  }
  return sheet;
}

inline void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace dlt
