#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <filesystem>
#include <zlib.h>

#include "dlt/data.hpp"

using namespace dlt;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Io;
}

std::string fixture() {
  // two 2x2 images
  return std::string("\x00\x00\x08\x03\x00\x00\x00\x02\x00\x00\x00\x02\x00\x00\x00\x02", 16) +
         std::string("\x00\x7f\x80\xff\x01\x02\x03\x04", 8);
}

}  // namespace

TEST(Idx, Fixture) {
  const ImageSet set = parse_idx(fixture());
  EXPECT_EQ(set.count, 2u);
  EXPECT_EQ(set.height, 2u);
  EXPECT_EQ(set.width, 2u);
  EXPECT_EQ(set.pixels, (std::vector<std::uint8_t>{0, 127, 128, 255, 1, 2, 3, 4}));
  EXPECT_EQ(encode_idx(set), fixture());
  const ImageSet second = slice(set, 1, 1);
  EXPECT_EQ(second.pixels, (std::vector<std::uint8_t>{1, 2, 3, 4}));
}

TEST(Idx, Errors) {
  const std::string labels = std::string("\x00\x00\x08\x01\x00\x00\x00\x02", 8) + std::string("\x03\x07", 2);
  EXPECT_EQ(code_of([&] { parse_idx(labels); }), ErrorCode::BadMagic);
  const std::string f = fixture();
  EXPECT_EQ(code_of([&] { parse_idx(f.substr(0, 20)); }), ErrorCode::TruncatedFile);
  EXPECT_EQ(code_of([&] { parse_idx(f.substr(0, 10)); }), ErrorCode::TruncatedFile);
  try {
    parse_idx(f.substr(0, 20));
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("20"), std::string::npos) << e.what();
  }
}

TEST(Idx, GzipRoundTrip) {
  const auto path = (std::filesystem::temp_directory_path() / "dlt_fixture.idx.gz").string();
  const std::string bytes = fixture();
  gzFile gz = gzopen(path.c_str(), "wb");
  ASSERT_NE(gz, nullptr);
  gzwrite(gz, bytes.data(), static_cast<unsigned>(bytes.size()));
  gzclose(gz);
  EXPECT_EQ(load_idx(path).pixels, parse_idx(bytes).pixels);
  std::filesystem::remove(path);
  EXPECT_THROW(load_idx(path), Error);
}

TEST(Quantize, Boundaries) {
  EXPECT_EQ(quantize_byte(0, 2), 0);
  EXPECT_EQ(quantize_byte(127, 2), 0);
  EXPECT_EQ(quantize_byte(128, 2), 1);
  EXPECT_EQ(quantize_byte(255, 2), 1);
  EXPECT_EQ(quantize_byte(255, 16), 15);
  EXPECT_EQ(quantize_byte(0, 16), 0);
  for (std::size_t levels : {2u, 4u, 16u, 256u}) {
    std::int32_t prev = 0;
    for (int b = 0; b < 256; ++b) {
      const auto s = quantize_byte(static_cast<std::uint8_t>(b), levels);
      EXPECT_GE(s, prev);
      prev = s;
      const double width = 256.0 / double(levels);
      const double centre = levels == 2 ? (s ? 191.5 : 63.5) : (s + 0.5) * width;
      EXPECT_LE(std::abs(centre - b), levels == 2 ? 128.0 : width);
    }
  }
  EXPECT_EQ(code_of([] { check_levels(3); }), ErrorCode::UnsupportedLevels);
  EXPECT_EQ(code_of([] { check_levels(512); }), ErrorCode::UnsupportedLevels);
}

TEST(Corrupt, PatchCounts) {
  Rng rng = make_rng(1, Stream::Corrupt);
  std::vector<StateGrid> grids(50, StateGrid(784, 1));
  const auto [obs, masks] = corrupt(grids, {28, 28}, rng);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    EXPECT_EQ(obs[i].observed_count(), 640u);
    EXPECT_LE(masks[i].row, 16u);
    EXPECT_LE(masks[i].col, 16u);
    for (std::size_t t = 0; t < 784; ++t) {
      EXPECT_EQ(obs[i].observed(t), !masks[i].contains(t / 28, t % 28));
      if (obs[i].observed(t)) EXPECT_EQ(obs[i].states[t], grids[i][t]);
    }
  }
  Rng again = make_rng(1, Stream::Corrupt);
  EXPECT_EQ(corrupt(grids, {28, 28}, again).second, masks);
  EXPECT_EQ(code_of([&] { corrupt(grids, {10, 10}, rng); }), ErrorCode::ImageTooSmall);
}

TEST(Corrupt, UniformPlacement) {
  Rng rng = make_rng(7, Stream::Corrupt);
  std::vector<StateGrid> grids(100000, StateGrid(784, 0));
  const auto masks = corrupt(grids, {28, 28}, rng).second;
  std::vector<double> counts(289, 0.0);
  for (const auto& m : masks) counts[m.row * 17 + m.col] += 1.0;
  const double expected = 100000.0 / 289.0;
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  const double p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(288), chi2));
  EXPECT_GT(p, 0.01) << chi2;
}

TEST(Mse, Examples) {
  const std::vector<CorruptionMask> masks{{0, 0, 12}};
  const std::vector<StateGrid> truth{StateGrid(784, 1)};
  EXPECT_EQ(mse_missing(truth, truth, masks, {28, 28}, 2), 0.0);
  StateGrid wrong(784, 1);
  for (std::size_t r = 0; r < 12; ++r)
    for (std::size_t c = 0; c < 12; ++c) wrong[r * 28 + c] = 0;
  EXPECT_EQ(mse_missing(truth, {wrong}, masks, {28, 28}, 2), 1.0);
  StateGrid half(784, 1);
  for (std::size_t r = 0; r < 12; ++r)
    for (std::size_t c = 0; c < 6; ++c) half[r * 28 + c] = 0;
  EXPECT_EQ(mse_missing(truth, {half}, masks, {28, 28}, 2), 0.5);
  // pooled over pixels
  std::vector<double> per_image;
  EXPECT_EQ(mse_missing({truth[0], truth[0]}, {wrong, truth[0]}, {masks[0], masks[0]}, {28, 28}, 2, &per_image), 0.5);
  EXPECT_EQ(per_image, (std::vector<double>{1.0, 0.0}));
}

TEST(Masks, CsvRoundTrip) {
  const std::vector<CorruptionMask> masks{{3, 4, 12}, {16, 0, 12}};
  const std::string csv = masks_to_csv(masks);
  EXPECT_EQ(csv, "image_index,patch_row,patch_col,patch_size\n0,3,4,12\n1,16,0,12\n");
  EXPECT_EQ(masks_from_csv(csv), masks);
  EXPECT_THROW(masks_from_csv("image_index,patch_row,patch_col,patch_size\n0,3\n"), Error);
}

TEST(Pgm, Fixtures) {
  const Image one{1, 1, {0.0}};
  EXPECT_EQ(write_pgm(one), std::string("P5\n1 1\n255\n\x00", 12));
  const Image grid = states_to_image(std::vector<std::int32_t>{0, 1, 1, 0}, {2, 2}, 2);
  EXPECT_EQ(write_pgm(grid), std::string("P5\n2 2\n255\n\x00\xff\xff\x00", 15));
  const std::string bytes = write_pgm(Image{2, 3, {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}});
  EXPECT_EQ(write_pgm(read_pgm(bytes)), bytes);
  EXPECT_EQ(code_of([] { read_pgm("P6\n1 1\n255\n\x00"); }), ErrorCode::MalformedHeader);
  EXPECT_EQ(code_of([] { read_pgm("P5\n2 2\n255\n\x00"); }), ErrorCode::TruncatedFile);
  EXPECT_EQ(code_of([] { read_pgm("P5\n1 1\n65535\n\x00\x00"); }), ErrorCode::MalformedHeader);
}

TEST(Pgm, Tiles) {
  const Image sheet = tile_images({Image{1, 1, {1.0}}, Image{1, 1, {0.0}}, Image{1, 1, {1.0}}}, 2);
  EXPECT_EQ(sheet.height, 5u);
  EXPECT_EQ(sheet.width, 5u);
  EXPECT_EQ(sheet.pixels[1 * 5 + 1], 1.0);
  EXPECT_EQ(sheet.pixels[1 * 5 + 3], 0.0);
  EXPECT_EQ(sheet.pixels[3 * 5 + 3], 0.5);
}
