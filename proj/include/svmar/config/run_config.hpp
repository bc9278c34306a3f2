#pragma once

// One JSON document configuring geometry, data synthesis, corruption, solver, training and loss.
// Every key is optional; unknown keys are errors. The hash covers the fully resolved config.

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "svmar/core/error.hpp"
#include "svmar/projector/geometry.hpp"
#include "svmar/simulate/dataset.hpp"
#include "svmar/solver/solver.hpp"
#include "svmar/train/train.hpp"
#include "svmar/util/hash.hpp"

namespace svmar {

struct GeometryConfig {
  std::size_t image_size = 64;
  std::size_t n_views = 128;
  std::size_t n_bins = 0;  // 0: round(1.5 * image_size)
  double fov = kDefaultFov;
  std::optional<double> dso, dsd, detector_pitch;
};

struct DataConfig {
  std::size_t phantoms = 2;
  std::uint64_t seed = 0;
  std::vector<double> metal_px{24.0, 8.0};
  Pairing pairing = Pairing::cartesian;
  std::size_t rate = 4;
};

struct RunConfig {
  GeometryConfig geometry;
  DataConfig data;
  CorruptionParams corruption;
  SolverConfig solver;
  TrainConfig train;
  LossConfig loss;
  std::uint64_t init_seed = 0;

  FanBeamGeometry make_geometry() const {
    FanBeamGeometry g = default_geometry(geometry.image_size, geometry.n_views, geometry.n_bins, geometry.fov);
    if (geometry.dso) g.dso = *geometry.dso;
    if (geometry.dsd) g.dsd = *geometry.dsd;
    if (geometry.detector_pitch) g.detector_pitch = *geometry.detector_pitch;
    g.validate();
    return g;
  }
  ImageShape shape() const { return {geometry.image_size, geometry.image_size}; }

  DatasetSpec dataset_spec() const {
    require(data.phantoms >= 1, "data: need at least one phantom");
    require(!data.metal_px.empty(), "data: need at least one metal size");
    DatasetSpec s;
    s.phantoms = random_phantoms(data.phantoms, data.seed);
    s.metals = random_metals(data.metal_px, geometry.image_size, data.seed + 7919);
    s.geometry = make_geometry();
    s.shape = shape();
    s.corruption = corruption;
    s.rate = data.rate;
    s.pairing = data.pairing;
    s.config_hash = hash();
    return s;
  }

  nlohmann::json to_json() const {
    using nlohmann::json;
    json g{{"image_size", geometry.image_size}, {"n_views", geometry.n_views}, {"n_bins", geometry.n_bins},
           {"fov", geometry.fov}};
    if (geometry.dso) g["dso"] = *geometry.dso;
    if (geometry.dsd) g["dsd"] = *geometry.dsd;
    if (geometry.detector_pitch) g["detector_pitch"] = *geometry.detector_pitch;
    json d{{"phantoms", data.phantoms},
           {"seed", data.seed},
           {"metal_px", data.metal_px},
           {"pairing", data.pairing == Pairing::cartesian ? "cartesian" : "zip"},
           {"rate", data.rate}};
    json s{{"stages", solver.stages},         {"prox", to_string(solver.prox)},
           {"tau_s", solver.tau_s},           {"tau_x", solver.tau_x},
           {"shared_prox", solver.shared_prox}, {"lambda0", solver.lambda0},
           {"eta_safety", solver.eta_safety}, {"eps_rel", solver.eps_rel},
           {"power_iters", solver.power_iters}, {"channels", solver.net.channels},
           {"blocks", solver.net.blocks},     {"std_filter", solver.net.std_filter},
           {"group", solver.net.group},       {"order", solver.net.order},
           {"eq_filter", solver.net.eq_filter}};
    if (solver.eta1) s["eta1"] = *solver.eta1;
    if (solver.eta2) s["eta2"] = *solver.eta2;
    json t{{"epochs", train.epochs},   {"max_steps", train.max_steps}, {"lr", train.lr},
           {"lr_decay", train.lr_decay}, {"decay_every", train.decay_every}, {"beta1", train.beta1},
           {"beta2", train.beta2},     {"adam_eps", train.adam_eps}, {"batch", train.batch},
           {"seed", train.seed},       {"init_seed", init_seed}};
    json l{{"gamma_final", loss.gamma_final},
           {"gamma_inner", loss.gamma_inner},
           {"beta", loss.beta},
           {"norm", loss.norm == LossNorm::l1 ? "l1" : "l2"}};
    return json{{"geometry", g}, {"data", d}, {"corruption", corruption}, {"solver", s}, {"train", t}, {"loss", l}};
  }

  std::string hash() const { return json_hash(to_json()); }

  static RunConfig from_json(const nlohmann::json& j) {
    RunConfig c;
    try {
      parse(j, c);
    } catch (const nlohmann::json::exception& e) {
      throw InvalidArgument(std::string("config: ") + e.what());
    }
    c.corruption.validate();
    c.solver.validate();
    c.train.validate();
    c.loss.validate();
    c.make_geometry();
    return c;
  }

 private:
  class Section {
   public:
    Section(const nlohmann::json& j, std::string name) : j_(j), name_(std::move(name)) {
      require(j_.is_object(), "config: section '" + name_ + "' must be an object");
    }
    template <class T>
    void get(const char* key, T& out) {
      if (!j_.contains(key)) return;
      used_.insert(key);
      out = j_.at(key).get<T>();
    }
    template <class T>
    void get(const char* key, std::optional<T>& out) {
      if (!j_.contains(key)) return;
      used_.insert(key);
      out = j_.at(key).get<T>();
    }
    bool has(const char* key) {
      if (!j_.contains(key)) return false;
      used_.insert(key);
      return true;
    }
    const nlohmann::json& at(const char* key) const { return j_.at(key); }
    void finish() const {
      for (const auto& [k, v] : j_.items())
        if (!used_.count(k)) throw InvalidArgument("config: unknown key '" + name_ + "." + k + "'");
    }

   private:
    const nlohmann::json& j_;
    std::string name_;
    std::set<std::string> used_;
  };

  static void parse(const nlohmann::json& j, RunConfig& c) {
    Section top(j, "<root>");
    if (top.has("geometry")) {
      Section s(top.at("geometry"), "geometry");
      s.get("image_size", c.geometry.image_size);
      s.get("n_views", c.geometry.n_views);
      s.get("n_bins", c.geometry.n_bins);
      s.get("fov", c.geometry.fov);
      s.get("dso", c.geometry.dso);
      s.get("dsd", c.geometry.dsd);
      s.get("detector_pitch", c.geometry.detector_pitch);
      s.finish();
    }
    if (top.has("data")) {
      Section s(top.at("data"), "data");
      s.get("phantoms", c.data.phantoms);
      s.get("seed", c.data.seed);
      s.get("metal_px", c.data.metal_px);
      s.get("rate", c.data.rate);
      std::string pairing = c.data.pairing == Pairing::cartesian ? "cartesian" : "zip";
      s.get("pairing", pairing);
      require(pairing == "cartesian" || pairing == "zip", "config: data.pairing must be cartesian or zip");
      c.data.pairing = pairing == "zip" ? Pairing::zip : Pairing::cartesian;
      s.finish();
    }
    if (top.has("corruption")) {
      Section s(top.at("corruption"), "corruption");
      s.get("alpha", c.corruption.alpha);
      s.get("i0", c.corruption.i0);
      s.get("mu_metal", c.corruption.mu_metal);
      s.get("seed", c.corruption.seed);
      s.finish();
    }
    if (top.has("solver")) {
      Section s(top.at("solver"), "solver");
      s.get("stages", c.solver.stages);
      std::string prox = to_string(c.solver.prox);
      s.get("prox", prox);
      c.solver.prox = parse_prox_kind(prox);
      s.get("tau_s", c.solver.tau_s);
      s.get("tau_x", c.solver.tau_x);
      s.get("shared_prox", c.solver.shared_prox);
      s.get("lambda0", c.solver.lambda0);
      s.get("eta_safety", c.solver.eta_safety);
      s.get("eta1", c.solver.eta1);
      s.get("eta2", c.solver.eta2);
      s.get("eps_rel", c.solver.eps_rel);
      s.get("power_iters", c.solver.power_iters);
      s.get("channels", c.solver.net.channels);
      s.get("blocks", c.solver.net.blocks);
      s.get("std_filter", c.solver.net.std_filter);
      s.get("group", c.solver.net.group);
      s.get("order", c.solver.net.order);
      s.get("eq_filter", c.solver.net.eq_filter);
      s.finish();
    }
    if (top.has("train")) {
      Section s(top.at("train"), "train");
      s.get("epochs", c.train.epochs);
      s.get("max_steps", c.train.max_steps);
      s.get("lr", c.train.lr);
      s.get("lr_decay", c.train.lr_decay);
      s.get("decay_every", c.train.decay_every);
      s.get("beta1", c.train.beta1);
      s.get("beta2", c.train.beta2);
      s.get("adam_eps", c.train.adam_eps);
      s.get("batch", c.train.batch);
      s.get("seed", c.train.seed);
      s.get("init_seed", c.init_seed);
      s.finish();
    }
    if (top.has("loss")) {
      Section s(top.at("loss"), "loss");
      s.get("gamma_final", c.loss.gamma_final);
      s.get("gamma_inner", c.loss.gamma_inner);
      s.get("beta", c.loss.beta);
      std::string norm = c.loss.norm == LossNorm::l1 ? "l1" : "l2";
      s.get("norm", norm);
      require(norm == "l1" || norm == "l2", "config: loss.norm must be l1 or l2");
      c.loss.norm = norm == "l1" ? LossNorm::l1 : LossNorm::l2;
      s.finish();
    }
    top.finish();
  }
};

inline RunConfig load_run_config(const std::filesystem::path& file) {
  std::ifstream f(file, std::ios::binary);
  if (!f) throw IoError("cannot read config " + file.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument("config " + file.string() + ": " + e.what());
  }
  return RunConfig::from_json(j);
}

/// The in-repo desk training fixture: 64 x 64, 128 views, x4, 10 phantoms x 3 implants for
/// training, K = 5, width 8, 200 Adam steps.
inline RunConfig desk_train_config() {
  RunConfig c;
  c.geometry.image_size = 64;
  c.geometry.n_views = 128;
  c.data.phantoms = 10;
  c.data.seed = 1000;
  c.data.metal_px = {40.0, 16.0, 6.0};
  c.data.pairing = Pairing::cartesian;
  c.data.rate = 4;
  c.corruption.seed = 1000;
  c.solver.stages = 5;
  c.solver.net.channels = 8;
  c.solver.prox = ProxKind::learned_equivariant;
  c.train.epochs = 7;
  c.train.max_steps = 200;
  c.train.seed = 1;
  c.init_seed = 1;
  return c;
}

/// Matching held-out set: 5 new phantoms, one implant each, large to small.
inline RunConfig desk_test_config(std::size_t rate = 4) {
  RunConfig c = desk_train_config();
  c.data.phantoms = 5;
  c.data.seed = 5000;
  c.data.metal_px = {48.0, 21.0, 11.0, 6.0, 3.0};
  c.data.pairing = Pairing::zip;
  c.data.rate = rate;
  c.corruption.seed = 5000;
  return c;
}

}  // namespace svmar
