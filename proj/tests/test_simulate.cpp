#include <gtest/gtest.h>

#include <filesystem>

#include "svmar/config/run_config.hpp"
#include "svmar/simulate/corruption.hpp"
#include "svmar/simulate/dataset.hpp"
#include "support.hpp"

using namespace svmar;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("svmar_sim_" + name);
  fs::remove_all(p);
  return p;
}

std::string dir_bytes(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) all += fs::relative(f, root).string() + "\n" + detail::read_text(f);
  return all;
}

}  // namespace

TEST(SparseMask, KeptViews) {
  const SinoMask d = sparse_mask(3, 640, 4);
  std::size_t kept = 0;
  for (std::size_t v = 0; v < 640; ++v) kept += d(0, v) == 0.0;
  EXPECT_EQ(kept, 160u);
  const SinoMask e = sparse_mask(2, 8, 4);
  for (std::size_t v = 0; v < 8; ++v) EXPECT_EQ(e(1, v), (v == 0 || v == 4) ? 0.0 : 1.0);
  const SinoMask all = sparse_mask(4, 8, 1);
  for (double v : all.values()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(sparse_mask(4, 128, 3), InvalidArgument);
}

TEST(SparseMask, CoverageMonotoneInRate) {
  double prev = -1.0;
  for (std::size_t r : {1, 2, 4, 8}) {
    const SinoMask d = sparse_mask(4, 64, r);
    double c = 0.0;
    for (double v : d.values()) c += v;
    EXPECT_GT(c, prev);
    prev = c;
  }
}

TEST(Corrupt, IdentityCase) {
  const FanBeamGeometry g = default_geometry(32, 64);
  const Sinogram y = forward_project(render_phantom(head_phantom(), 32, 32), g);
  CorruptionParams p;
  p.alpha = 0.0;
  p.i0 = 0.0;
  const auto [out, tr] = corrupt_sinogram(y, ImageMask(32, 32), g, p);
  EXPECT_EQ(out.vec(), y.vec());
  for (double v : tr.values()) EXPECT_EQ(v, 0.0);
}

TEST(Corrupt, BeamHardeningOnlyInsideTrace) {
  const FanBeamGeometry g = default_geometry(32, 64);
  const ImageMask m = render_mask(metal_disk_spec(12, 32, 0.2, 0.0), 32, 32);
  const Sinogram y = forward_project(insert_metal(render_phantom(head_phantom(), 32, 32), m, 2.0), g);
  CorruptionParams p;
  p.alpha = 0.2;
  p.i0 = 0.0;
  const auto [out, tr] = corrupt_sinogram(y, m, g, p);
  std::size_t inside = 0;
  for (std::size_t k = 0; k < y.size(); ++k) {
    if (tr[k] == 1.0 && y[k] > 0.0) {
      EXPECT_LT(out[k], y[k]);
      ++inside;
    } else {
      EXPECT_EQ(out[k], y[k]);
    }
  }
  EXPECT_GT(inside, 0u);
}

TEST(Corrupt, NoiseIsSeeded) {
  const FanBeamGeometry g = default_geometry(32, 64);
  const ImageMask m = render_mask(metal_disk_spec(12, 32, 0.2, 0.0), 32, 32);
  const Sinogram y = forward_project(render_phantom(head_phantom(), 32, 32), g);
  CorruptionParams p;
  p.i0 = 1e5;
  p.seed = 42;
  EXPECT_EQ(corrupt_sinogram(y, m, g, p).first.vec(), corrupt_sinogram(y, m, g, p).first.vec());
}

TEST(ViewRemoval, Cases) {
  const Sinogram y = fixtures::random_grid<Sinogram>(5, 8, 1);
  EXPECT_EQ(apply_view_removal(y, SinoMask(5, 8)).vec(), y.vec());
  SinoMask ones(5, 8);
  ones.vec().assign(ones.size(), 1.0);
  const Sinogram none = apply_view_removal(y, ones);
  for (double v : none.values()) EXPECT_EQ(v, 0.0);
  const Sinogram r = apply_view_removal(y, sparse_mask(5, 8, 4));
  EXPECT_EQ(std::count(r.vec().begin(), r.vec().end(), 0.0), 6 * 5);
}

TEST(InterpFill, IdentityWithoutMasks) {
  const Sinogram y = fixtures::random_grid<Sinogram>(6, 8, 2);
  EXPECT_EQ(linear_interp_fill(y, SinoMask(6, 8), SinoMask(6, 8)).vec(), y.vec());
}

TEST(InterpFill, EqualNeighboursAndRamp) {
  Sinogram y(4, 8);
  for (std::size_t b = 0; b < 4; ++b)
    for (std::size_t v = 0; v < 8; ++v) y(b, v) = static_cast<double>(v);
  const SinoMask d = sparse_mask(4, 8, 2);
  const Sinogram f = linear_interp_fill(apply_view_removal(y, d), SinoMask(4, 8), d);
  for (std::size_t b = 0; b < 4; ++b)
    for (std::size_t v = 1; v < 7; v += 2) EXPECT_EQ(f(b, v), static_cast<double>(v));

  Sinogram c(3, 8);
  for (std::size_t b = 0; b < 3; ++b) {
    c(b, 2) = 1.5;
    c(b, 4) = 1.5;
  }
  SinoMask dd(3, 8);
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t v : {0, 1, 3, 5, 6, 7}) dd(b, v) = 1.0;
  const Sinogram g = linear_interp_fill(c, SinoMask(3, 8), dd);
  for (std::size_t b = 0; b < 3; ++b) EXPECT_EQ(g(b, 3), 1.5);
}

TEST(InterpFill, IsAProjection) {
  const FanBeamGeometry g = default_geometry(32, 64);
  const ImageMask m = render_mask(metal_disk_spec(20, 32, 0.1, 0.2), 32, 32);
  const SinoMask tr = metal_trace(m, g), d = sparse_mask(g.n_bins, g.n_views, 4);
  const Sinogram y = apply_view_removal(forward_project(render_phantom(head_phantom(), 32, 32), g), d);
  const Sinogram once = linear_interp_fill(y, tr, d);
  EXPECT_EQ(linear_interp_fill(once, tr, d).vec(), once.vec());
}

TEST(Dataset, CartesianCountManifestAndDeterminism) {
  RunConfig cfg;
  cfg.geometry.image_size = 32;
  cfg.geometry.n_views = 32;
  cfg.data.phantoms = 2;
  cfg.data.metal_px = {12, 5};
  const fs::path a = scratch("a"), b = scratch("b");
  EXPECT_EQ(make_dataset(cfg.dataset_spec(), a), 4u);
  EXPECT_EQ(make_dataset(cfg.dataset_spec(), b, 3), 4u);
  EXPECT_EQ(dir_bytes(a), dir_bytes(b));
  const Dataset ds = load_dataset(a);
  ASSERT_EQ(ds.records.size(), 4u);
  EXPECT_EQ(ds.config_hash, cfg.hash());
  EXPECT_EQ(ds.records[0].metal_px, 12u);
  EXPECT_EQ(ds.records[1].metal_px, 5u);
  for (const auto& r : ds.records) {
    EXPECT_EQ(count_ones(r.metal), r.metal_px);
    EXPECT_EQ(r.rate, 4u);
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Dataset, CleanEntriesMatchGroundTruth) {
  RunConfig cfg;
  cfg.geometry.image_size = 32;
  cfg.geometry.n_views = 32;
  cfg.data.phantoms = 1;
  cfg.data.metal_px = {15};
  cfg.corruption.alpha = 0.0;
  cfg.corruption.i0 = 0.0;
  const DatasetSpec spec = cfg.dataset_spec();
  const SampleRecord r = synthesize_record(spec.phantoms[0], spec.metals[0], spec.geometry, spec.shape,
                                           spec.corruption, 4, 0);
  for (std::size_t k = 0; k < r.y_gt.size(); ++k)
    if (r.tr[k] == 0.0 && r.d[k] == 0.0) EXPECT_EQ(r.y_svma[k], r.y_gt[k]);
}

TEST(Dataset, PaperScaleFlaggedSlow) {
  EXPECT_TRUE(is_slow_config({416, 416}, default_geometry(416, 640)));
  EXPECT_FALSE(is_slow_config({64, 64}, default_geometry(64, 128)));
}

TEST(Dataset, RateMustDivideViews) {
  RunConfig cfg;
  cfg.geometry.n_views = 128;
  cfg.data.rate = 3;
  const fs::path a = scratch("bad");
  EXPECT_THROW(make_dataset(cfg.dataset_spec(), a), InvalidArgument);
  fs::remove_all(a);
}
