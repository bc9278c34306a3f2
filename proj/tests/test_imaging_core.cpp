#include <gtest/gtest.h>

#include <numbers>

#include "svmar/core/phantom.hpp"
#include "svmar/core/rotate.hpp"
#include "svmar/core/tensor_io.hpp"
#include "support.hpp"

using namespace svmar;

namespace {

Image gaussian_blob(std::size_t n, double sigma) {
  Image x(n, n);
  const double c = 0.5 * static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double di = static_cast<double>(i) - c, dj = static_cast<double>(j) - c;
      x(i, j) = std::exp(-(di * di + dj * dj) / (2.0 * sigma * sigma));
    }
  return x;
}

double sum(const Image& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return s;
}

}  // namespace

TEST(RenderPhantom, CenteredDisk) {
  const Image img = render_phantom(disk_phantom(0.5), 64, 64);
  EXPECT_DOUBLE_EQ(img(32, 32), 1.0);
  EXPECT_DOUBLE_EQ(img(31, 31), 1.0);
  EXPECT_DOUBLE_EQ(img(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(img(63, 63), 0.0);
}

TEST(RenderPhantom, EmptySpecIsError) {
  EXPECT_THROW(render_phantom(PhantomSpec{}, 64, 64), InvalidArgument);
  EXPECT_THROW(render_phantom(disk_phantom(0.5), 0, 64), InvalidArgument);
}

TEST(RenderPhantom, HeadPhantomSupportMatchesEllipseArea) {
  const Image img = render_phantom(head_phantom(), 128, 128);
  std::size_t nz = 0;
  for (double v : img.values()) nz += v != 0.0;
  const auto& outer = head_phantom().ellipses[0];
  // The field of view is the square [-1, 1]^2 of area 4.
  const double analytic = std::numbers::pi * outer.a * outer.b / 4.0;
  const double measured = static_cast<double>(nz) / (128.0 * 128.0);
  EXPECT_NEAR(measured, analytic, 0.02 * analytic);
}

TEST(RenderPhantom, Deterministic) {
  std::mt19937_64 rng(3);
  const PhantomSpec p = random_phantom(rng);
  EXPECT_EQ(render_phantom(p, 48, 48).vec(), render_phantom(p, 48, 48).vec());
}

TEST(RotateImage, ZeroAngleIsIdentity) {
  const Image x = fixtures::random_grid<Image>(17, 17, 1);
  EXPECT_EQ(rotate_image(x, 0.0).vec(), x.vec());
  EXPECT_EQ(rotate_image(x, 0.0, Interp::nearest).vec(), x.vec());
}

TEST(RotateImage, QuarterTurnNearestIsPermutation) {
  const std::size_t n = 16;
  Image x(n, n);
  for (std::size_t k = 0; k < x.size(); ++k) x[k] = static_cast<double>(k);
  const Image r = rotate_image(x, std::numbers::pi / 2, Interp::nearest);
  std::vector<double> a = x.vec(), b = r.vec();
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_EQ(a, b);
  // Clockwise in (column right, row up): the bottom-left corner moves to the top-left.
  EXPECT_EQ(r(0, 0), x(n - 1, 0));
  EXPECT_EQ(r(0, n - 1), x(0, 0));
}

TEST(RotateImage, FourQuarterTurnsRoundTripExactly) {
  const Image x = fixtures::random_grid<Image>(20, 20, 2);
  Image r = x;
  for (int i = 0; i < 4; ++i) r = rotate_image(r, std::numbers::pi / 2, Interp::nearest);
  EXPECT_EQ(r.vec(), x.vec());
}

TEST(RotateImage, FortyFiveThereAndBackOnBlob) {
  const Image x = gaussian_blob(64, 6.0);
  const Image r = rotate_image(rotate_image(x, std::numbers::pi / 4), -std::numbers::pi / 4);
  EXPECT_LE(relative_l2(r, x), 0.02);
}

TEST(RotateImage, PreservesDiskIntensity) {
  const Image x = render_phantom(disk_phantom(0.5), 64, 64);
  for (double deg : {10.0, 30.0, 45.0, 77.0, 90.0, 200.0}) {
    const Image r = rotate_image(x, deg * std::numbers::pi / 180.0);
    EXPECT_NEAR(sum(r), sum(x), 0.01 * sum(x)) << deg;
  }
}

TEST(InsertMetal, EmptyAndFullMasks) {
  const Image x = render_phantom(shepp_logan(), 32, 32);
  EXPECT_EQ(insert_metal(x, ImageMask(32, 32), 2.0).vec(), x.vec());
  ImageMask full(32, 32);
  full.vec().assign(full.size(), 1.0);
  for (double v : insert_metal(x, full, 2.0).values()) EXPECT_EQ(v, 2.0);
}

TEST(InsertMetal, ExactPixelCount) {
  const Image x = render_phantom(head_phantom(), 64, 64);
  const ImageMask m = render_mask(metal_disk_spec(118, 64, 0.2, -0.1, 1.3), 64, 64);
  EXPECT_EQ(count_ones(m), 118u);
  const Image y = insert_metal(x, m, 2.0);
  EXPECT_EQ(std::count(y.vec().begin(), y.vec().end(), 2.0), 118);
}

TEST(InsertMetal, Idempotent) {
  const Image x = render_phantom(head_phantom(), 64, 64);
  const ImageMask m = render_mask(metal_disk_spec(40, 64, -0.3, 0.2), 64, 64);
  const Image once = insert_metal(x, m, 2.0);
  EXPECT_EQ(insert_metal(once, m, 2.0).vec(), once.vec());
}

TEST(InsertMetal, ShapeMismatchIsError) {
  EXPECT_THROW(insert_metal(Image(8, 8), ImageMask(8, 9), 2.0), ShapeMismatch);
}

TEST(TensorIo, RoundTripIsExact) {
  const Tensor t = fixtures::random_tensor({3, 4, 5}, 9);
  const Tensor u = io::decode_tensor(io::encode_tensor(t));
  EXPECT_EQ(u.shape(), t.shape());
  EXPECT_EQ(u.vec(), io::quantize_f32(t).vec());
  EXPECT_EQ(io::decode_tensor(io::encode_tensor(u)).vec(), u.vec());
}
