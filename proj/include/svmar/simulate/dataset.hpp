#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "svmar/core/phantom.hpp"
#include "svmar/core/tensor_io.hpp"
#include "svmar/projector/projector.hpp"
#include "svmar/simulate/corruption.hpp"
#include "svmar/util/hash.hpp"
#include "svmar/util/parallel.hpp"

namespace svmar {

inline constexpr int kDatasetVersion = 1;

struct SampleRecord {
  std::string id;
  Image x_gt;
  ImageMask metal;
  Sinogram y_gt;
  Sinogram y_svma;
  SinoMask tr;
  SinoMask d;
  std::size_t metal_px = 0;
  std::size_t rate = 1;
  std::uint64_t seed = 0;
};

enum class Pairing { cartesian, zip };

struct DatasetSpec {
  std::vector<PhantomSpec> phantoms;
  std::vector<PhantomSpec> metals;
  FanBeamGeometry geometry;
  ImageShape shape{64, 64};
  CorruptionParams corruption;
  std::size_t rate = 4;
  Pairing pairing = Pairing::cartesian;
  std::string config_hash;
};

inline void to_json(nlohmann::json& j, const Ellipse& e) {
  j = nlohmann::json::array({e.cx, e.cy, e.a, e.b, e.angle, e.intensity});
}
inline void from_json(const nlohmann::json& j, Ellipse& e) {
  require(j.is_array() && j.size() == 6, "ellipse must be [cx, cy, a, b, angle, intensity]");
  e = Ellipse{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
              j[3].get<double>(), j[4].get<double>(), j[5].get<double>()};
}
inline void to_json(nlohmann::json& j, const PhantomSpec& p) {
  if (p.pixels > 0)
    j = nlohmann::json{{"ellipses", p.ellipses}, {"pixels", p.pixels}};
  else
    j = p.ellipses;
}
inline void from_json(const nlohmann::json& j, PhantomSpec& p) {
  if (j.is_object()) {
    j.at("ellipses").get_to(p.ellipses);
    p.pixels = j.value("pixels", std::size_t{0});
  } else {
    j.get_to(p.ellipses);
    p.pixels = 0;
  }
}

inline void to_json(nlohmann::json& j, const CorruptionParams& c) {
  j = nlohmann::json{{"alpha", c.alpha}, {"i0", c.i0}, {"mu_metal", c.mu_metal}, {"seed", c.seed}};
}

/// Paper-scale problems are accepted but take a long time on a CPU.
inline bool is_slow_config(ImageShape shape, const FanBeamGeometry& g) {
  return static_cast<double>(shape.rows * shape.cols) * static_cast<double>(g.n_views) >
         128.0 * 128.0 * 360.0;
}

/// Builds one record: ground truth, metal support, clean and corrupted sinograms, masks.
inline SampleRecord synthesize_record(const PhantomSpec& phantom, const PhantomSpec& metal,
                                      const FanBeamGeometry& geom, ImageShape shape,
                                      CorruptionParams params, std::size_t rate, std::uint64_t seed) {
  SampleRecord r;
  r.x_gt = render_phantom(phantom, shape.rows, shape.cols);
  r.metal = render_mask(metal, shape.rows, shape.cols);
  r.metal_px = count_ones(r.metal);
  r.rate = rate;
  r.seed = seed;
  params.seed = seed;
  const FanBeamProjector proj(geom, shape);
  r.y_gt = proj.forward(r.x_gt);
  const Sinogram y_metal = proj.forward(insert_metal(r.x_gt, r.metal, params.mu_metal));
  auto [y_corrupt, tr] = corrupt_sinogram(y_metal, r.metal, geom, params);
  r.tr = std::move(tr);
  r.d = sparse_mask(geom.n_bins, geom.n_views, rate);
  r.y_svma = apply_view_removal(y_corrupt, r.d);
  return r;
}

namespace detail {

inline const char* const kRecordFiles[] = {"x_gt", "metal", "y_gt", "y_svma", "tr", "d"};

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + p.string());
  f << s;
  if (!f) throw IoError("write failed: " + p.string());
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + p.string());
  return std::string(std::istreambuf_iterator<char>(f), {});
}

inline void make_dirs(const std::filesystem::path& p) {
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec || !std::filesystem::is_directory(p)) throw IoError("cannot create directory " + p.string());
}

}  // namespace detail

/// Synthesises every (phantom, metal) pair and writes tensors plus manifest.json. Record i uses
/// seed corruption.seed + i, so the output does not depend on the worker count.
inline std::size_t make_dataset(const DatasetSpec& spec, const std::filesystem::path& out, int threads = 1) {
  require(!spec.phantoms.empty(), "make_dataset: need at least one phantom");
  require(!spec.metals.empty(), "make_dataset: need at least one metal");
  spec.geometry.validate();
  spec.corruption.validate();
  require(spec.geometry.n_views % spec.rate == 0, "rate must divide views");
  check_image_dims(spec.shape.rows, spec.shape.cols);

  struct Pair {
    std::size_t p, m;
  };
  std::vector<Pair> pairs;
  if (spec.pairing == Pairing::cartesian) {
    for (std::size_t p = 0; p < spec.phantoms.size(); ++p)
      for (std::size_t m = 0; m < spec.metals.size(); ++m) pairs.push_back({p, m});
  } else {
    for (std::size_t p = 0; p < spec.phantoms.size(); ++p) pairs.push_back({p, p % spec.metals.size()});
  }

  detail::make_dirs(out);
  std::vector<nlohmann::json> entries(pairs.size());
  parallel_for(pairs.size(), threads, [&](std::size_t i) {
    const std::uint64_t seed = spec.corruption.seed + i;
    SampleRecord r = synthesize_record(spec.phantoms[pairs[i].p], spec.metals[pairs[i].m], spec.geometry,
                                       spec.shape, spec.corruption, spec.rate, seed);
    char name[32];
    std::snprintf(name, sizeof name, "rec_%04zu", i);
    detail::make_dirs(out / name);
    nlohmann::json files;
    const std::string dir = name;
    auto put = [&](const char* key, const Tensor& t) {
      const std::string rel = dir + "/" + key + ".ctt";
      io::write_tensor(out / rel, t);
      files[key] = rel;
    };
    put("x_gt", r.x_gt.to_tensor());
    put("metal", r.metal.to_tensor());
    put("y_gt", r.y_gt.to_tensor());
    put("y_svma", r.y_svma.to_tensor());
    put("tr", r.tr.to_tensor());
    put("d", r.d.to_tensor());
    entries[i] = nlohmann::json{{"id", dir},      {"phantom", pairs[i].p}, {"metal", pairs[i].m},
                                {"metal_px", r.metal_px}, {"seed", seed},  {"files", files}};
  });

  nlohmann::json manifest;
  manifest["version"] = kDatasetVersion;
  manifest["geometry"] = spec.geometry;
  manifest["geometry_hash"] = json_hash(nlohmann::json(spec.geometry));
  manifest["image"] = {{"rows", spec.shape.rows}, {"cols", spec.shape.cols}};
  manifest["corruption"] = spec.corruption;
  manifest["rate"] = spec.rate;
  manifest["seed"] = spec.corruption.seed;
  manifest["pairing"] = spec.pairing == Pairing::cartesian ? "cartesian" : "zip";
  manifest["config_hash"] = spec.config_hash;
  manifest["slow"] = is_slow_config(spec.shape, spec.geometry);
  manifest["phantoms"] = spec.phantoms;
  manifest["metals"] = spec.metals;
  manifest["records"] = entries;
  detail::write_text(out / "manifest.json", manifest.dump(2) + "\n");
  return pairs.size();
}

struct Dataset {
  std::filesystem::path root;
  nlohmann::json manifest;
  FanBeamGeometry geometry;
  ImageShape shape;
  std::string geometry_hash;
  std::string config_hash;
  std::vector<SampleRecord> records;
};

inline Dataset load_dataset(const std::filesystem::path& root) {
  Dataset ds;
  ds.root = root;
  try {
    ds.manifest = nlohmann::json::parse(detail::read_text(root / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("invalid dataset manifest in " + root.string() + ": " + e.what());
  }
  const auto& m = ds.manifest;
  require(m.value("version", 0) == kDatasetVersion, "unsupported dataset version");
  ds.geometry = m.at("geometry").get<FanBeamGeometry>();
  ds.shape = {m.at("image").at("rows").get<std::size_t>(), m.at("image").at("cols").get<std::size_t>()};
  ds.geometry_hash = m.at("geometry_hash").get<std::string>();
  ds.config_hash = m.value("config_hash", std::string{});
  const std::size_t rate = m.at("rate").get<std::size_t>();
  for (const auto& e : m.at("records")) {
    SampleRecord r;
    r.id = e.at("id").get<std::string>();
    const auto& f = e.at("files");
    auto path = [&](const char* k) { return root / f.at(k).get<std::string>(); };
    r.x_gt = io::read_grid<Image>(path("x_gt"));
    r.metal = io::read_grid<ImageMask>(path("metal"));
    r.y_gt = io::read_grid<Sinogram>(path("y_gt"));
    r.y_svma = io::read_grid<Sinogram>(path("y_svma"));
    r.tr = io::read_grid<SinoMask>(path("tr"));
    r.d = io::read_grid<SinoMask>(path("d"));
    r.metal_px = e.at("metal_px").get<std::size_t>();
    r.seed = e.at("seed").get<std::uint64_t>();
    r.rate = rate;
    require_shape(shape_of(r.x_gt) == ds.shape, "dataset record " + r.id + ": image shape mismatch");
    require_shape(r.y_svma.rows() == ds.geometry.n_bins && r.y_svma.cols() == ds.geometry.n_views,
                  "dataset record " + r.id + ": sinogram shape mismatch");
    ds.records.push_back(std::move(r));
  }
  return ds;
}

/// Random desk-scale anatomy phantoms.
inline std::vector<PhantomSpec> random_phantoms(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<PhantomSpec> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_phantom(rng));
  return out;
}

/// One elliptical implant per requested pixel count, placed inside the body region.
inline std::vector<PhantomSpec> random_metals(const std::vector<double>& sizes_px, std::size_t image_size,
                                              std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<PhantomSpec> out;
  for (double px : sizes_px) {
    const double r = 0.15 + 0.3 * u(rng), t = 2.0 * std::numbers::pi * u(rng);
    const double aspect = 0.6 + 0.8 * u(rng);
    PhantomSpec s = metal_disk_spec(px, image_size, r * std::cos(t), r * std::sin(t), aspect);
    s.ellipses[0].angle = std::numbers::pi * u(rng);
    out.push_back(s);
  }
  return out;
}

}  // namespace svmar
