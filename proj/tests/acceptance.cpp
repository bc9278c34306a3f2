// Acceptance run: one PASS/FAIL line per criterion, runtime limits included.
// Criteria listed with --known-failures still print FAIL but do not fail the exit code.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "svmar/checks.hpp"
#include "svmar/pipeline.hpp"
#include "svmar/projector/fbp.hpp"

namespace fs = std::filesystem;
using namespace svmar;

namespace {

class Stopwatch {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

struct Outcome {
  int id;
  bool passed;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string timing(double s, double limit) { return fmt("%.1f s", s) + fmt(" (limit %.0f s)", limit); }

std::string file_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

std::string tree_bytes(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) all += f.lexically_relative(root).string() + '\n' + file_bytes(f);
  return all;
}

Outcome adjoint() {
  const Stopwatch sw;
  const auto r = checks::adjoint_suite(64, 128, 20);
  const double t = sw.seconds();
  return {1, r.passed && t < 10.0,
          "adjoint identity, 20 pairs at 64x64 / 128 views: max rel mismatch " + fmt("%.2e", r.value) +
              " (bound 1e-10), " + timing(t, 10)};
}

Outcome fbp_sanity() {
  const Stopwatch sw;
  const std::size_t n = 128;
  const FanBeamGeometry g = default_geometry(n, 360);
  const Image x = render_phantom(shepp_logan(), n, n);
  const Image rec = fbp(forward_project(x, g), g, {n, n});
  const Image w = disk_window(n, n);
  double se = 0.0, cnt = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (w[i] != 0.0) {
      se += (rec[i] - x[i]) * (rec[i] - x[i]);
      cnt += 1.0;
    }
  const double p = 10.0 * std::log10(1.0 / (se / cnt));
  const double t = sw.seconds();
  return {2, p >= 25.0 && t < 30.0,
          "FBP Shepp-Logan 128x128 / 360 views: PSNR in disk " + fmt("%.2f dB", p) + " (need >= 25), " +
              timing(t, 30)};
}

Outcome gradient() {
  const Stopwatch sw;
  bool ok = true;
  std::string d = "FD vs backward, K=2 at 16x16:";
  for (ProxKind k : {ProxKind::learned_standard, ProxKind::learned_equivariant}) {
    const auto g = checks::gradient_suite_raw(k);
    ok = ok && g.max_rel <= 1e-4;
    d += " " + to_string(k) + " " + fmt("%.2e", g.max_rel) + " over " + std::to_string(g.count) + " params;";
  }
  const double t = sw.seconds();
  return {4, ok && t < 300.0, d + " bound 1e-4, " + timing(t, 300)};
}

Outcome descent() {
  const Stopwatch sw;
  const auto rs = checks::descent_suite(5, 10, 1e-9);
  double worst = -1e300;
  for (const auto& r : rs) worst = std::max(worst, r.value);
  const double t = sw.seconds();
  return {5, checks::all_passed(rs) && t < 60.0,
          "identity prox, safe steps, 5 fixtures x 10 stages: max objective increase " + fmt("%.2e", worst) +
              " (tolerance 1e-9), " + timing(t, 60)};
}

Outcome masked() {
  const Stopwatch sw;
  std::size_t diff = 0;
  for (ProxKind k :
       {ProxKind::identity, ProxKind::soft_threshold, ProxKind::learned_standard, ProxKind::learned_equivariant})
    diff += checks::masked_independence(k);
  const double t = sw.seconds();
  return {8, diff == 0 && t < 10.0,
          "masked Y_svma perturbation, 4 prox kinds: " + std::to_string(diff) + " differing stage entries, " +
              timing(t, 10)};
}

/// Desk fixture shared by criteria 3, 6, 7 and 9.
struct Desk {
  fs::path root;
  RunConfig train_cfg = desk_train_config();
  Dataset train_ds;
  std::vector<Dataset> test;  // rates 2, 4, 8
  TrainedModel eq, std;
  double build_seconds = 0.0;

  fs::path test_dir(std::size_t rate) const { return root / ("test_x" + std::to_string(rate)); }

  void build(int threads) {
    const Stopwatch sw;
    fs::remove_all(root);
    make_dataset(train_cfg.dataset_spec(), root / "train", threads);
    for (std::size_t r : {2, 4, 8}) make_dataset(desk_test_config(r).dataset_spec(), test_dir(r), threads);
    train_ds = load_dataset(root / "train");
    for (std::size_t r : {2, 4, 8}) test.push_back(load_dataset(test_dir(r)));
    for (ProxKind k : {ProxKind::learned_standard, ProxKind::learned_equivariant}) {
      RunConfig c = train_cfg;
      c.solver.prox = k;
      const Stopwatch t;
      const TrainResult res = train_to(c, train_ds, root / ("ck_" + to_string(k)));
      std::printf("  trained %s: %ld steps in %.1f s, loss %.5f -> %.5f\n", to_string(k).c_str(), res.steps,
                  t.seconds(), res.curve.front().loss, res.curve.back().loss);
      std::fflush(stdout);
    }
    std = load_model(root / "ck_learned-standard");
    eq = load_model(root / "ck_learned-equivariant");
    build_seconds = sw.seconds();
  }

  EvalReport eval(const Dataset& ds, const std::string& method, int threads) {
    TrainedModel* m = method == "learned-equivariant" ? &eq : method == "learned-standard" ? &std : nullptr;
    return evaluate_method(ds, method, train_cfg, m, threads);
  }
};

Outcome trained_equivariance(Desk& desk) {
  const Stopwatch sw;
  const auto r = checks::trained_equivariance(*desk.eq.solver, desk.eq.params, *desk.std.solver, desk.std.params);
  const double grid = *std::max_element(r.eq_grid.begin(), r.eq_grid.end());
  const double e45 = *std::max_element(r.eq_45.begin(), r.eq_45.end());
  const double ratio = r.mean_std_45() / r.mean_eq_45();
  std::string per;
  for (std::size_t k = 0; k < r.eq_45.size(); ++k)
    per += fmt(" %.4f", r.std_45[k]) + fmt("/%.4f", r.eq_45[k]);
  std::printf("  45 deg error per stage, standard/equivariant:%s\n", per.c_str());
  const double t = sw.seconds();
  return {3, grid <= 1e-5 && e45 <= 0.05 && ratio >= 10.0 && t < 60.0,
          "trained X-prox nets: equivariant 90/180/270 max " + fmt("%.2e", grid) + " (bound 1e-5), 45 deg max " +
              fmt("%.4f", e45) + " (bound 0.05); standard/equivariant 45 deg ratio " + fmt("%.2f", ratio) +
              " (need >= 10), " + timing(t, 60)};
}

Outcome training_regression(Desk& desk, double& eval_seconds, int threads) {
  const Stopwatch sw;
  const Dataset& x4 = desk.test[1];
  const double input = desk.eval(x4, "input", threads).mean_psnr;
  const double eqp = desk.eval(x4, "learned-equivariant", threads).mean_psnr;
  const double stdp = desk.eval(x4, "learned-standard", threads).mean_psnr;
  const std::size_t pe = desk.eq.solver->param_count(), ps = desk.std.solver->param_count();
  eval_seconds = sw.seconds();
  const double t = desk.build_seconds + eval_seconds;
  const bool a = eqp >= input + 3.0, b = eqp >= stdp - 0.5 && pe < ps;
  return {6, a && b && t < 900.0,
          "desk x4: input " + fmt("%.2f", input) + " dB, learned-standard " + fmt("%.2f", stdp) +
              " dB, learned-equivariant " + fmt("%.2f", eqp) + " dB; (a) " + (a ? "ok" : "no") + ", (b) " +
              (b ? "ok" : "no") + " with params " + std::to_string(pe) + " < " + std::to_string(ps) + ", " +
              timing(t, 900)};
}

Outcome undersampling(Desk& desk, int threads) {
  const Stopwatch sw;
  double p[3];
  for (int i = 0; i < 3; ++i) p[i] = desk.eval(desk.test[static_cast<std::size_t>(i)], "learned-equivariant", threads).mean_psnr;
  const double t = sw.seconds();
  const bool ok = p[0] - p[1] >= 0.3 && p[1] - p[2] >= 0.3;
  return {7, ok && t < 300.0,
          "learned-equivariant mean PSNR x2 " + fmt("%.2f", p[0]) + " > x4 " + fmt("%.2f", p[1]) + " > x8 " +
              fmt("%.2f", p[2]) + " dB (gaps >= 0.3), " + timing(t, 300)};
}

Outcome determinism(Desk& desk) {
  const Stopwatch sw;
  const fs::path again = desk.root / "rerun";
  fs::remove_all(again);
  make_dataset(desk.train_cfg.dataset_spec(), again / "train", 2);
  const bool sim = tree_bytes(again / "train") == tree_bytes(desk.root / "train");
  RunConfig c = desk.train_cfg;
  c.solver.prox = ProxKind::learned_equivariant;
  train_to(c, load_dataset(again / "train"), again / "ck");
  const bool tr = tree_bytes(again / "ck") == tree_bytes(desk.root / "ck_learned-equivariant");
  const Dataset& x4 = desk.test[1];
  const EvalReport r1 = desk.eval(x4, "learned-equivariant", 1), r2 = desk.eval(x4, "learned-equivariant", 2);
  write_report(r1, again / "eval1");
  write_report(r2, again / "eval2");
  const bool ev = tree_bytes(again / "eval1") == tree_bytes(again / "eval2");
  const double t = sw.seconds();
  return {9, sim && tr && ev && t < 1200.0,
          std::string("rerun byte-identical: simulate ") + (sim ? "yes" : "no") + ", train " + (tr ? "yes" : "no") +
              ", evaluate 1 vs 2 threads " + (ev ? "yes" : "no") + ", " + timing(t, 1200)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria 1-9"};
  std::vector<int> known;
  fs::path work = fs::temp_directory_path() / "svmar_acceptance";
  int threads = 1;
  app.add_option("--known-failures", known, "Criteria whose failure is recorded and does not fail the run")
      ->delimiter(',');
  app.add_option("--work", work, "Scratch directory for the desk datasets and checkpoints");
  app.add_option("--threads", threads, "Worker threads for simulate / evaluate")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);
  const std::set<int> known_set(known.begin(), known.end());

  std::vector<Outcome> all;
  const auto report = [&](const Outcome& o) {
    const bool listed = known_set.count(o.id) != 0;
    std::printf("criterion %d %s  %s%s\n", o.id, o.passed ? "PASS" : "FAIL", o.detail.c_str(),
                listed ? (o.passed ? "  [listed as known failure, now passing]" : "  [known failure]") : "");
    std::fflush(stdout);
    all.push_back(o);
  };

  try {
    report(adjoint());
    report(fbp_sanity());
    Desk desk;
    desk.root = work;
    desk.build(threads);
    report(trained_equivariance(desk));
    report(gradient());
    report(descent());
    double eval_seconds = 0.0;
    report(training_regression(desk, eval_seconds, threads));
    report(undersampling(desk, threads));
    report(masked());
    report(determinism(desk));
  } catch (const std::exception& e) {
    std::printf("error: %s\n", e.what());
    return 2;
  }

  std::sort(all.begin(), all.end(), [](const Outcome& a, const Outcome& b) { return a.id < b.id; });
  int unexpected = 0;
  std::string summary;
  for (const auto& o : all) {
    summary += " " + std::to_string(o.id) + (o.passed ? ":PASS" : ":FAIL");
    if (!o.passed && !known_set.count(o.id)) ++unexpected;
  }
  std::printf("summary:%s; unexpected failures %d\n", summary.c_str(), unexpected);
  return unexpected == 0 ? 0 : 1;
}
