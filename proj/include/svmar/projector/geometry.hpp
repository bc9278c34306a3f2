#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "svmar/core/error.hpp"
#include "svmar/core/phantom.hpp"

namespace svmar {

/// Equiangular fan-beam geometry. View v places the source at
/// dso * (cos b_v, sin b_v); bin k looks along the central ray rotated
/// counter-clockwise by (k - (Nb-1)/2) * detector_pitch.
struct FanBeamGeometry {
  std::size_t n_views = 128;
  std::size_t n_bins = 96;
  double dso = 1.5 * kDefaultFov;
  double dsd = 3.0 * kDefaultFov;
  double detector_pitch = 0.0;  // radians per bin
  double fov = kDefaultFov;
  std::vector<double> view_angles;

  double fan_angle(std::size_t bin) const {
    return (static_cast<double>(bin) - 0.5 * static_cast<double>(n_bins - 1)) * detector_pitch;
  }

  void validate() const {
    require(n_views >= 1 && n_bins >= 1, "geometry: need at least one view and one bin");
    require(view_angles.size() == n_views, "geometry: view_angles size must equal n_views");
    for (std::size_t v = 1; v < n_views; ++v)
      require(view_angles[v] > view_angles[v - 1], "geometry: view angles must be strictly increasing");
    require(fov > 0.0, "geometry: fov must be positive");
    require(dso > fov / std::numbers::sqrt2, "geometry: source must lie outside the image support");
    require(dsd > dso, "geometry: dsd must exceed dso");
    require(detector_pitch > 0.0 && std::isfinite(detector_pitch), "geometry: detector pitch must be positive");
    require(0.5 * static_cast<double>(n_bins) * detector_pitch < std::numbers::pi / 2,
            "geometry: fan wider than 180 degrees");
  }

  bool operator==(const FanBeamGeometry&) const = default;
};

inline std::vector<double> uniform_view_angles(std::size_t n_views) {
  std::vector<double> a(n_views);
  for (std::size_t v = 0; v < n_views; ++v)
    a[v] = 2.0 * std::numbers::pi * static_cast<double>(v) / static_cast<double>(n_views);
  return a;
}

/// Default desk geometry: Nb = round(1.5 * image size), dso = 1.5 FOV, dsd = 3 FOV and a fan that
/// covers the inscribed circle with a 5% margin.
inline FanBeamGeometry default_geometry(std::size_t image_size, std::size_t n_views, std::size_t n_bins = 0,
                                        double fov = kDefaultFov) {
  FanBeamGeometry g;
  g.n_views = n_views;
  g.n_bins = n_bins ? n_bins : static_cast<std::size_t>(std::lround(1.5 * static_cast<double>(image_size)));
  g.fov = fov;
  g.dso = 1.5 * fov;
  g.dsd = 3.0 * fov;
  const double half_fan = std::asin(1.05 * 0.5 * fov / g.dso);
  g.detector_pitch = 2.0 * half_fan / static_cast<double>(g.n_bins);
  g.view_angles = uniform_view_angles(n_views);
  g.validate();
  return g;
}

/// Same sampling pattern with every length multiplied by c; line integrals scale by c.
inline FanBeamGeometry scaled_geometry(FanBeamGeometry g, double c) {
  g.dso *= c;
  g.dsd *= c;
  g.fov *= c;
  return g;
}

inline void to_json(nlohmann::json& j, const FanBeamGeometry& g) {
  j = nlohmann::json{{"n_views", g.n_views}, {"n_bins", g.n_bins},
                     {"dso", g.dso},         {"dsd", g.dsd},
                     {"detector_pitch", g.detector_pitch}, {"view_angles", g.view_angles},
                     {"fov", g.fov}};
}

inline void from_json(const nlohmann::json& j, FanBeamGeometry& g) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    static const char* known[] = {"n_views", "n_bins", "dso", "dsd", "detector_pitch", "view_angles", "fov"};
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    require(ok, "geometry: unknown key '" + it.key() + "'");
  }
  j.at("n_views").get_to(g.n_views);
  j.at("n_bins").get_to(g.n_bins);
  j.at("dso").get_to(g.dso);
  j.at("dsd").get_to(g.dsd);
  j.at("detector_pitch").get_to(g.detector_pitch);
  j.at("view_angles").get_to(g.view_angles);
  j.at("fov").get_to(g.fov);
  g.validate();
}

/// Image grid the projector maps to and from.
struct ImageShape {
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool operator==(const ImageShape&) const = default;
};

template <class Tag>
ImageShape shape_of(const Grid<Tag>& g) {
  return {g.rows(), g.cols()};
}

}  // namespace svmar
