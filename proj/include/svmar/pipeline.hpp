#pragma once

// Glue shared by the CLI and the acceptance binary: trained checkpoints that carry their own
// config, record lookup, and the train / evaluate drivers.

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "svmar/config/run_config.hpp"
#include "svmar/nn/params.hpp"
#include "svmar/simulate/dataset.hpp"
#include "svmar/solver/solver.hpp"
#include "svmar/train/evaluate.hpp"
#include "svmar/train/train.hpp"
#include "svmar/util/hash.hpp"

namespace svmar {

inline std::string geometry_hash(const FanBeamGeometry& g) { return json_hash(nlohmann::json(g)); }

/// Parameters plus the solver they belong to, rebuilt from the config stored in the checkpoint.
struct TrainedModel {
  RunConfig config;
  std::unique_ptr<UnrolledSolver> solver;
  nn::ParamStore params;
  std::string checkpoint_id;
  std::string geometry_hash;
  long step = 0;

  ProxKind prox() const { return config.solver.prox; }
};

inline void save_model(const nn::ParamStore& params, const RunConfig& cfg, long step,
                       const std::filesystem::path& dir) {
  const nlohmann::json extra{{"config", cfg.to_json()},
                             {"prox", to_string(cfg.solver.prox)},
                             {"geometry_hash", geometry_hash(cfg.make_geometry())}};
  nn::save_checkpoint(params, dir, step, cfg.hash(), extra);
}

inline TrainedModel load_model(const std::filesystem::path& dir) {
  std::ifstream f(dir / "manifest.json", std::ios::binary);
  if (!f) throw IoError("missing checkpoint manifest in " + dir.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("invalid checkpoint manifest: ") + e.what());
  }
  require(m.contains("extra") && m["extra"].contains("config"), "checkpoint " + dir.string() + " carries no config");
  TrainedModel t;
  t.config = RunConfig::from_json(m["extra"]["config"]);
  require(is_learned(t.config.solver.prox), "checkpoint prox kind is not learned");
  t.solver = std::make_unique<UnrolledSolver>(t.config.make_geometry(), t.config.shape(), t.config.solver);
  t.solver->init_params(t.params, t.config.init_seed);
  const nn::CheckpointInfo info = nn::load_checkpoint(t.params, dir);
  require(info.config_hash == t.config.hash(), "checkpoint config hash does not match its stored config");
  t.checkpoint_id = info.id;
  t.step = info.step;
  t.geometry_hash = m["extra"].value("geometry_hash", geometry_hash(t.config.make_geometry()));
  return t;
}

/// Trains the configured prox kind on a dataset directory and writes checkpoint + loss.csv.
inline TrainResult train_to(const RunConfig& cfg, const Dataset& ds, const std::filesystem::path& out) {
  require(is_learned(cfg.solver.prox), "train: solver.prox must be learned-standard or learned-equivariant");
  const UnrolledSolver solver(ds.geometry, ds.shape, cfg.solver);
  require(geometry_hash(cfg.make_geometry()) == ds.geometry_hash,
          "train: config geometry does not match the dataset geometry");
  TrainResult res = train(ds, solver, cfg.train, cfg.loss, cfg.init_seed);
  save_model(res.params, cfg, res.steps, out);
  write_loss_curve(res.curve, out / "loss.csv");
  return res;
}

/// Evaluates one method. Learned methods take the model; baselines use `base`'s solver settings.
inline EvalReport evaluate_method(const Dataset& ds, const std::string& method, const RunConfig& base,
                                  TrainedModel* model, int threads) {
  EvalOptions o;
  o.threads = threads;
  o.config_hash = base.hash();
  o.solver = base.solver;
  if (method == "learned-standard" || method == "learned-equivariant") {
    require(model != nullptr, "evaluate: method '" + method + "' needs a checkpoint");
    require(to_string(model->prox()) == method, "evaluate: checkpoint is " + to_string(model->prox()) +
                                                     ", not " + method);
    o.solver = model->config.solver;
    o.params = &model->params;
    o.checkpoint_id = model->checkpoint_id;
    o.expected_geometry_hash = model->geometry_hash;
    o.config_hash = model->config.hash();
  }
  return evaluate(ds, method, o);
}

/// Resolves "DATASET/rec_xxxx" or "DATASET" + id to a record of a loaded dataset.
inline std::pair<Dataset, std::size_t> load_record(const std::filesystem::path& input, const std::string& id = "") {
  std::filesystem::path root = input;
  std::string want = id;
  if (!std::filesystem::exists(input / "manifest.json")) {
    root = input.parent_path();
    if (want.empty()) want = input.filename().string();
  }
  Dataset ds = load_dataset(root);
  require(!ds.records.empty(), "dataset " + root.string() + " has no records");
  if (want.empty()) return {std::move(ds), 0};
  for (std::size_t i = 0; i < ds.records.size(); ++i)
    if (ds.records[i].id == want) return {std::move(ds), i};
  throw InvalidArgument("no record '" + want + "' in " + root.string());
}

}  // namespace svmar
