#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "svmar/core/error.hpp"
#include "svmar/nn/params.hpp"
#include "svmar/simulate/dataset.hpp"
#include "svmar/solver/solver.hpp"
#include "svmar/train/metrics.hpp"
#include "svmar/util/parallel.hpp"

namespace svmar {

inline const std::vector<std::string>& eval_methods() {
  static const std::vector<std::string> m{"input",         "identity",           "soft-threshold",
                                          "learned-standard", "learned-equivariant", "ground-truth"};
  return m;
}

struct EvalRow {
  std::string sample;
  std::size_t rate = 0;
  std::size_t metal_px = 0;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct EvalGroup {
  std::size_t key = 0;  // rate or metal_px
  std::size_t count = 0;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct EvalReport {
  std::string method;
  std::vector<EvalRow> rows;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  std::vector<EvalGroup> by_rate;
  std::vector<EvalGroup> by_metal;  // descending metal size
  std::string config_hash;
  std::string checkpoint_id;
  std::string geometry_hash;
};

namespace detail {
template <class Key>
std::vector<EvalGroup> group_means(const std::vector<EvalRow>& rows, Key key, bool descending) {
  std::map<std::size_t, EvalGroup> g;
  for (const auto& r : rows) {
    EvalGroup& e = g[key(r)];
    e.key = key(r);
    ++e.count;
    e.psnr += r.psnr;
    e.ssim += r.ssim;
  }
  std::vector<EvalGroup> out;
  for (auto& [k, e] : g) {
    e.psnr /= static_cast<double>(e.count);
    e.ssim /= static_cast<double>(e.count);
    out.push_back(e);
  }
  if (descending) std::reverse(out.begin(), out.end());
  return out;
}
}  // namespace detail

/// Recomputes the overall and grouped means from the rows.
inline void summarize(EvalReport& rep) {
  rep.mean_psnr = rep.mean_ssim = 0.0;
  for (const auto& r : rep.rows) {
    rep.mean_psnr += r.psnr;
    rep.mean_ssim += r.ssim;
  }
  if (!rep.rows.empty()) {
    rep.mean_psnr /= static_cast<double>(rep.rows.size());
    rep.mean_ssim /= static_cast<double>(rep.rows.size());
  }
  rep.by_rate = detail::group_means(rep.rows, [](const EvalRow& r) { return r.rate; }, false);
  rep.by_metal = detail::group_means(rep.rows, [](const EvalRow& r) { return r.metal_px; }, true);
}

struct EvalOptions {
  SolverConfig solver;           // prox kind is overridden by the method
  nn::ParamStore* params = nullptr;  // required for learned methods
  std::string checkpoint_id;
  std::string expected_geometry_hash;  // checked against the dataset when non-empty
  std::string config_hash;
  int threads = 1;
};

/// Scores one method on every record of a dataset.
inline EvalReport evaluate(const Dataset& ds, const std::string& method, const EvalOptions& opt) {
  bool known = false;
  for (const auto& m : eval_methods()) known = known || m == method;
  require(known, "evaluate: unknown method '" + method + "'");
  if (!opt.expected_geometry_hash.empty() && opt.expected_geometry_hash != ds.geometry_hash)
    throw InvalidArgument("evaluate: geometry hash mismatch (checkpoint " + opt.expected_geometry_hash +
                          ", dataset " + ds.geometry_hash + ")");
  EvalReport rep;
  rep.method = method;
  rep.config_hash = opt.config_hash;
  rep.checkpoint_id = opt.checkpoint_id;
  rep.geometry_hash = ds.geometry_hash;
  rep.rows.resize(ds.records.size());

  std::unique_ptr<UnrolledSolver> solver;
  if (method != "ground-truth" && method != "input") {
    SolverConfig sc = opt.solver;
    sc.prox = parse_prox_kind(method);
    require(!is_learned(sc.prox) || opt.params != nullptr, "evaluate: method '" + method + "' needs a checkpoint");
    solver = std::make_unique<UnrolledSolver>(ds.geometry, ds.shape, sc);
  }

  parallel_for(ds.records.size(), opt.threads, [&](std::size_t i) {
    const SampleRecord& r = ds.records[i];
    Image out;
    if (method == "ground-truth") {
      out = r.x_gt;
    } else if (method == "input") {
      out = compute_normalizer(r.y_svma, r.tr, r.d, ds.geometry, ds.shape, 0.0, opt.solver.eps_rel).x_prior;
    } else {
      out = solver->run(SolverInputs{r.y_svma, r.tr, r.d}, opt.params).x.back();
    }
    rep.rows[i] = EvalRow{r.id, r.rate, r.metal_px, psnr(out, r.x_gt), ssim(out, r.x_gt)};
  });
  summarize(rep);
  return rep;
}

inline std::string report_csv(const EvalReport& rep) {
  std::ostringstream s;
  s << "sample,rate,metal_px,psnr,ssim\n";
  char buf[160];
  for (const auto& r : rep.rows) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%.6f,%.6f\n", r.sample.c_str(), r.rate, r.metal_px, r.psnr, r.ssim);
    s << buf;
  }
  return s.str();
}

/// Methods as rows, mean PSNR/SSIM per rate and overall as columns.
inline std::string report_table(const std::vector<EvalReport>& reps) {
  std::ostringstream s;
  char buf[256];
  std::vector<std::size_t> rates;
  for (const auto& r : reps)
    for (const auto& g : r.by_rate)
      if (std::find(rates.begin(), rates.end(), g.key) == rates.end()) rates.push_back(g.key);
  std::sort(rates.begin(), rates.end());
  std::snprintf(buf, sizeof buf, "%-22s", "method");
  s << buf;
  for (std::size_t rt : rates) {
    std::snprintf(buf, sizeof buf, " | x%-2zu PSNR/SSIM   ", rt);
    s << buf;
  }
  s << " | mean PSNR/SSIM\n";
  for (const auto& r : reps) {
    std::snprintf(buf, sizeof buf, "%-22s", r.method.c_str());
    s << buf;
    for (std::size_t rt : rates) {
      const EvalGroup* g = nullptr;
      for (const auto& e : r.by_rate)
        if (e.key == rt) g = &e;
      if (g)
        std::snprintf(buf, sizeof buf, " | %6.2f / %.4f ", g->psnr, g->ssim);
      else
        std::snprintf(buf, sizeof buf, " | %15s ", "-");
      s << buf;
    }
    std::snprintf(buf, sizeof buf, " | %6.2f / %.4f\n", r.mean_psnr, r.mean_ssim);
    s << buf;
  }
  return s.str();
}

/// Structured text: metadata, overall means, per-rate and per-metal-size groups.
inline std::string report_text(const EvalReport& rep) {
  std::ostringstream s;
  char buf[200];
  s << "method: " << rep.method << "\nconfig_hash: " << rep.config_hash << "\ncheckpoint: "
    << (rep.checkpoint_id.empty() ? "-" : rep.checkpoint_id) << "\ngeometry_hash: " << rep.geometry_hash << "\n";
  std::snprintf(buf, sizeof buf, "samples: %zu\nmean_psnr: %.6f\nmean_ssim: %.6f\n", rep.rows.size(), rep.mean_psnr,
                rep.mean_ssim);
  s << buf;
  for (const auto& g : rep.by_rate) {
    std::snprintf(buf, sizeof buf, "rate x%zu: n=%zu psnr=%.6f ssim=%.6f\n", g.key, g.count, g.psnr, g.ssim);
    s << buf;
  }
  for (const auto& g : rep.by_metal) {
    std::snprintf(buf, sizeof buf, "metal %zu px: n=%zu psnr=%.6f ssim=%.6f\n", g.key, g.count, g.psnr, g.ssim);
    s << buf;
  }
  return s.str();
}

/// Writes <method>.csv and <method>.txt into dir.
inline void write_report(const EvalReport& rep, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create report dir " + dir.string());
  auto put = [&](const std::string& name, const std::string& text) {
    std::ofstream f(dir / name, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + (dir / name).string());
    f << text;
  };
  put(rep.method + ".csv", report_csv(rep));
  put(rep.method + ".txt", report_text(rep));
}

}  // namespace svmar
