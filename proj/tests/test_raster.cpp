#include "doctest.h"
#include "shanshui/errors.hpp"
#include "shanshui/raster.hpp"
#include "test_support.hpp"

using namespace shanshui;
using shanshui::testing::TempDir;

TEST_CASE("load_raster decodes a white RGB PNG") {
  TempDir dir;
  save_png(dir / "white.png", Raster(2, 2, 3, 255));
  const Raster img = load_raster(dir / "white.png");
  CHECK(img == Raster(2, 2, 3, 255));
}

TEST_CASE("load_raster decodes JPEG") {
  const Raster black = load_raster(testing::fixture("black_1x1.jpg"));
  CHECK(black == Raster(1, 1, 3, 0));

  const Raster gray = load_raster(testing::fixture("gray_4x3.jpg"));
  CHECK(gray.channels == 1);
  CHECK(gray.width == 4);
  CHECK(gray.height == 3);
}

TEST_CASE("grayscale PNG keeps one channel") {
  TempDir dir;
  Raster g(3, 2, 1, 17);
  save_png(dir / "g.png", g);
  CHECK(load_raster(dir / "g.png") == g);
}

TEST_CASE("truncated and foreign files are format errors") {
  TempDir dir;
  auto bytes = encode_png(Raster(8, 8, 3, 100));
  bytes.resize(bytes.size() / 2);
  write_file(dir / "cut.png", bytes);
  CHECK_THROWS_AS(load_raster(dir / "cut.png"), FormatError);

  const std::string text = "hello, not an image";
  write_file(dir / "t.png", std::span(reinterpret_cast<const std::uint8_t*>(text.data()),
                                      text.size()));
  CHECK_THROWS_AS(load_raster(dir / "t.png"), FormatError);
  CHECK_THROWS_AS(load_raster(dir / "missing.png"), IoError);
}

TEST_CASE("alpha is composited over white") {
  // Pixels: transparent black, then red at alpha 128.
  const Raster img = load_raster(testing::fixture("rgba_2x1.png"));
  REQUIRE(img.channels == 3);
  CHECK(img.at(0, 0, 0) == 255);
  CHECK(img.at(0, 0, 2) == 255);
  CHECK(img.at(1, 0, 0) == 255);
  CHECK(img.at(1, 0, 1) == 127);
  CHECK(img.at(1, 0, 2) == 127);
}

TEST_CASE("resize") {
  Rng rng = make_rng(3);
  const Raster img = testing::random_raster(16, 16, 3, rng);
  CHECK(resize(img, 16) == img);

  Raster checker(2, 2, 1);
  checker.data = {0, 255, 255, 0};
  const Raster one = resize(checker, 1);
  CHECK(one.width == 1);
  CHECK(one.data[0] == 128);  // 127.5 rounded half-up

  const Raster flat = resize(Raster(10, 7, 3, 93), 23);
  CHECK(flat == Raster(23, 23, 3, 93));
}

TEST_CASE("hconcat places parts side by side") {
  const Raster a(2, 3, 3, 10);
  const Raster b(4, 3, 3, 20);
  const Raster parts[] = {a, b};
  const Raster joined = hconcat(parts);
  CHECK(joined.width == 6);
  CHECK(joined.at(1, 2, 0) == 10);
  CHECK(joined.at(2, 0, 2) == 20);
  const Raster bad[] = {a, Raster(2, 4, 3)};
  CHECK_THROWS_AS(hconcat(bad), ShapeError);
}
