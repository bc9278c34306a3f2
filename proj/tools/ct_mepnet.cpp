// ct_mepnet: simulate, reconstruct, train, evaluate and check subcommands.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "svmar/checks.hpp"
#include "svmar/pipeline.hpp"
#include "svmar/util/png.hpp"

namespace fs = std::filesystem;
using namespace svmar;

namespace {

RunConfig config_or_default(const std::string& file) { return file.empty() ? RunConfig{} : load_run_config(file); }

void log(const std::string& s) { std::fprintf(stderr, "%s\n", s.c_str()); }

int cmd_simulate(const std::string& config, const fs::path& out, std::optional<std::uint64_t> seed, int threads) {
  RunConfig cfg = config_or_default(config);
  if (seed) {
    cfg.data.seed = *seed;
    cfg.corruption.seed = *seed;
  }
  const std::size_t n = make_dataset(cfg.dataset_spec(), out, threads);
  std::printf("wrote %zu records to %s (config %s)\n", n, out.string().c_str(), cfg.hash().c_str());
  return 0;
}

struct ReconstructArgs {
  fs::path input, out, checkpoint;
  std::string record, prox = "identity", config;
  int stages = 0;
  bool dump = false, png = false;
};

int cmd_reconstruct(const ReconstructArgs& a) {
  auto [ds, idx] = load_record(a.input, a.record);
  const SampleRecord& r = ds.records[idx];
  std::optional<TrainedModel> model;
  RunConfig cfg;
  if (!a.checkpoint.empty()) {
    model = load_model(a.checkpoint);
    cfg = model->config;
    if (model->geometry_hash != ds.geometry_hash)
      throw InvalidArgument("checkpoint geometry " + model->geometry_hash + " does not match dataset " +
                            ds.geometry_hash);
  } else {
    cfg = config_or_default(a.config);
    cfg.solver.prox = parse_prox_kind(a.prox);
    if (is_learned(cfg.solver.prox)) throw InvalidArgument("--prox " + a.prox + " needs --checkpoint");
    if (a.stages > 0) cfg.solver.stages = a.stages;
  }
  const UnrolledSolver solver(ds.geometry, ds.shape, cfg.solver);
  const SolverInputs in = inputs_of(r);
  const NormalizationData norm = solver.normalize(in);
  const SolverState st = solver.run(in, norm, model ? &model->params : nullptr);

  fs::create_directories(a.out);
  Sinogram s_k = st.s_bar.back();
  for (std::size_t i = 0; i < s_k.size(); ++i) s_k[i] *= norm.y_bar[i];
  io::write_grid(a.out / "x_k.ctt", st.x.back());
  io::write_grid(a.out / "s_k.ctt", s_k);
  std::size_t dumped = 0;
  if (a.dump) dumped = dump_stages(st, norm.y_bar, a.out / "stages");
  if (a.png) {
    write_png(a.out / "x_0.png", st.x.front(), r.x_gt);
    write_png(a.out / "x_k.png", st.x.back(), r.x_gt);
    write_png(a.out / "x_gt.png", r.x_gt, r.x_gt);
    if (a.dump)
      for (int k = 1; k <= st.k; ++k) {
        char name[32];
        std::snprintf(name, sizeof name, "stage_%02d_x.png", k);
        write_png(a.out / "stages" / name, st.x[static_cast<std::size_t>(k)], r.x_gt);
      }
  }
  const double p0 = psnr(st.x.front(), r.x_gt), pk = psnr(st.x.back(), r.x_gt);
  const nlohmann::json summary{{"record", r.id},
                               {"prox", to_string(cfg.solver.prox)},
                               {"stages", st.k},
                               {"config_hash", cfg.hash()},
                               {"checkpoint", model ? model->checkpoint_id : ""},
                               {"geometry_hash", ds.geometry_hash},
                               {"psnr_x0", p0},
                               {"psnr_xk", pk},
                               {"ssim_xk", ssim(st.x.back(), r.x_gt)},
                               {"stage_files", dumped}};
  std::ofstream(a.out / "summary.json", std::ios::binary | std::ios::trunc) << summary.dump(2) << "\n";
  std::printf("%s: %s K=%d  PSNR X0 %.3f dB -> XK %.3f dB\n", r.id.c_str(), to_string(cfg.solver.prox).c_str(), st.k,
              p0, pk);
  return 0;
}

struct TrainArgs {
  std::string config, prox;
  fs::path data, out;
  std::optional<long> max_steps;
  std::optional<int> epochs;
  bool desk = false;
};

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = a.desk ? desk_train_config() : config_or_default(a.config);
  if (!a.prox.empty()) cfg.solver.prox = parse_prox_kind(a.prox);
  if (a.max_steps) cfg.train.max_steps = *a.max_steps;
  if (a.epochs) cfg.train.epochs = *a.epochs;
  cfg.train.validate();
  const Dataset ds = load_dataset(a.data);
  log("training " + to_string(cfg.solver.prox) + " on " + std::to_string(ds.records.size()) + " records");
  const TrainResult res = train_to(cfg, ds, a.out);
  const double last = res.curve.empty() ? 0.0 : res.curve.back().loss;
  std::printf("trained %ld steps, final loss %.6g, checkpoint %s (config %s)\n", res.steps, last,
              a.out.string().c_str(), cfg.hash().c_str());
  return 0;
}

struct EvaluateArgs {
  fs::path data, report;
  std::string config;
  std::vector<std::string> methods, checkpoints;
  int threads = 1;
};

int cmd_evaluate(const EvaluateArgs& a) {
  const Dataset ds = load_dataset(a.data);
  const RunConfig base = config_or_default(a.config);
  std::vector<TrainedModel> models;
  for (const auto& c : a.checkpoints) models.push_back(load_model(c));
  std::vector<std::string> methods = a.methods;
  if (methods.empty()) methods = {"input", "identity", "soft-threshold"};
  std::vector<EvalReport> reps;
  for (const auto& m : methods) {
    TrainedModel* model = nullptr;
    for (auto& t : models)
      if (to_string(t.prox()) == m) model = &t;
    reps.push_back(evaluate_method(ds, m, base, model, a.threads));
    if (!a.report.empty()) write_report(reps.back(), a.report);
  }
  std::printf("%s", report_table(reps).c_str());
  return 0;
}

int cmd_check(const std::string& suite, int group) {
  std::vector<checks::CheckResult> rs;
  if (suite == "adjoint") {
    rs.push_back(checks::adjoint_suite());
  } else if (suite == "equivariance") {
    if (group > 0) {
      rs = checks::equivariance_suite(group);
    } else {
      for (int g : {4, 8})
        for (auto& r : checks::equivariance_suite(g)) rs.push_back(r);
    }
  } else if (suite == "gradient") {
    for (ProxKind k : {ProxKind::learned_standard, ProxKind::learned_equivariant})
      rs.push_back(checks::gradient_suite(k));
  } else if (suite == "descent") {
    rs = checks::descent_suite();
  } else {
    throw InvalidArgument("unknown suite '" + suite + "'");
  }
  for (const auto& r : rs) std::printf("%s\n", checks::format(r).c_str());
  return checks::all_passed(rs) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse-view CT reconstruction with metal artifact reduction"};
  app.require_subcommand(1);
  int threads = threads_from_env();
  app.add_option("--threads", threads, "Worker threads (default: $CT_MEPNET_THREADS or 1)")
      ->check(CLI::PositiveNumber);

  std::string sim_config;
  fs::path sim_out;
  std::optional<std::uint64_t> sim_seed;
  auto* sim = app.add_subcommand("simulate", "Synthesise a corrupted dataset");
  sim->add_option("--config", sim_config, "Run config (JSON)");
  sim->add_option("--out", sim_out, "Output dataset directory")->required();
  sim->add_option("--seed", sim_seed, "Overrides data and corruption seeds");

  ReconstructArgs ra;
  auto* rec = app.add_subcommand("reconstruct", "Run the unrolled solver on one record");
  rec->add_option("--input", ra.input, "Dataset directory or record directory")->required();
  rec->add_option("--record", ra.record, "Record id when --input is a dataset");
  auto* ck = rec->add_option("--checkpoint", ra.checkpoint, "Trained checkpoint directory");
  rec->add_option("--prox", ra.prox, "identity | soft-threshold (without checkpoint)")->excludes(ck);
  rec->add_option("--config", ra.config, "Run config for solver settings")->excludes(ck);
  rec->add_option("--stages", ra.stages, "Override K")->excludes(ck);
  rec->add_option("--out", ra.out, "Output directory")->required();
  rec->add_flag("--dump-stages", ra.dump, "Write every stage image and sinogram");
  rec->add_flag("--png", ra.png, "Also write 8-bit PNGs windowed to the ground truth");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train a learned prox variant");
  tr->add_option("--config", ta.config, "Run config (JSON)");
  tr->add_flag("--desk", ta.desk, "Use the built-in desk training fixture config");
  tr->add_option("--data", ta.data, "Training dataset directory")->required();
  tr->add_option("--out", ta.out, "Checkpoint directory")->required();
  tr->add_option("--prox", ta.prox, "learned-standard | learned-equivariant");
  tr->add_option("--max-steps", ta.max_steps, "Stop after this many steps");
  tr->add_option("--epochs", ta.epochs, "Epoch count");

  EvaluateArgs ea;
  auto* ev = app.add_subcommand("evaluate", "Score methods on a dataset");
  ev->add_option("--data", ea.data, "Test dataset directory")->required();
  ev->add_option("--methods", ea.methods, "Methods (input identity soft-threshold learned-standard "
                                          "learned-equivariant ground-truth)")
      ->delimiter(',');
  ev->add_option("--checkpoint", ea.checkpoints, "Checkpoint(s) for learned methods");
  ev->add_option("--config", ea.config, "Run config for baseline solver settings");
  ev->add_option("--report", ea.report, "Directory for <method>.csv / <method>.txt");

  std::string suite;
  int group = 0;
  auto* chk = app.add_subcommand("check", "Run an invariant suite");
  chk->add_option("--suite", suite, "adjoint | equivariance | gradient | descent")
      ->required()
      ->check(CLI::IsMember({"adjoint", "equivariance", "gradient", "descent"}));
  chk->add_option("--group", group, "Group order for the equivariance suite (default: 4 and 8)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*sim) return cmd_simulate(sim_config, sim_out, sim_seed, threads);
    if (*rec) return cmd_reconstruct(ra);
    if (*tr) return cmd_train(ta);
    if (*ev) {
      ea.threads = threads;
      return cmd_evaluate(ea);
    }
    if (*chk) return cmd_check(suite, group);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
