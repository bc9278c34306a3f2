#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "svmar/core/error.hpp"
#include "svmar/core/tensor.hpp"
#include "svmar/core/tensor_io.hpp"
#include "svmar/util/hash.hpp"

namespace svmar::nn {

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor adam_m;
  Tensor adam_v;
};

/// Named trainable tensors in registration order, plus non-trainable buffers (BN running stats).
class ParamStore {
 public:
  Param& add(const std::string& name, Tensor init) {
    require(!index_.count(name) && !buffer_index_.count(name), "duplicate parameter name: " + name);
    index_[name] = params_.size();
    const Shape s = init.shape();
    params_.push_back(Param{name, std::move(init), Tensor(s), Tensor(s), Tensor(s)});
    return params_.back();
  }

  Tensor& add_buffer(const std::string& name, Tensor init) {
    require(!index_.count(name) && !buffer_index_.count(name), "duplicate buffer name: " + name);
    buffer_index_[name] = buffers_.size();
    buffers_.push_back({name, std::move(init)});
    return buffers_.back().second;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }
  bool has_buffer(const std::string& name) const { return buffer_index_.count(name) != 0; }

  Param& get(const std::string& name) {
    auto it = index_.find(name);
    require(it != index_.end(), "unknown parameter: " + name);
    return params_[it->second];
  }
  const Param& get(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), "unknown parameter: " + name);
    return params_[it->second];
  }
  Tensor& buffer(const std::string& name) {
    auto it = buffer_index_.find(name);
    require(it != buffer_index_.end(), "unknown buffer: " + name);
    return buffers_[it->second].second;
  }
  const Tensor& buffer(const std::string& name) const {
    auto it = buffer_index_.find(name);
    require(it != buffer_index_.end(), "unknown buffer: " + name);
    return buffers_[it->second].second;
  }

  std::vector<Param>& params() noexcept { return params_; }
  const std::vector<Param>& params() const noexcept { return params_; }
  const std::vector<std::pair<std::string, Tensor>>& buffers() const noexcept { return buffers_; }
  std::vector<std::pair<std::string, Tensor>>& buffers() noexcept { return buffers_; }

  /// Total number of trainable scalars.
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  /// Trainable scalars whose names start with prefix.
  std::size_t scalar_count(const std::string& prefix) const {
    std::size_t n = 0;
    for (const auto& p : params_)
      if (p.name.rfind(prefix, 0) == 0) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(0.0);
  }

  /// Rounds values and buffers through f32 so the store equals its own checkpoint.
  void quantize() {
    for (auto& p : params_) p.value = io::quantize_f32(std::move(p.value));
    for (auto& b : buffers_) b.second = io::quantize_f32(std::move(b.second));
  }

 private:
  std::vector<Param> params_;
  std::map<std::string, std::size_t> index_;
  std::vector<std::pair<std::string, Tensor>> buffers_;
  std::map<std::string, std::size_t> buffer_index_;
};

inline constexpr int kCheckpointVersion = 1;

/// Checkpoint directory: manifest.json plus one tensor file per parameter and buffer.
inline void save_checkpoint(const ParamStore& store, const std::filesystem::path& dir, long step,
                            const std::string& config_hash, const nlohmann::json& extra = nlohmann::json::object()) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create checkpoint dir " + dir.string());
  nlohmann::json params = nlohmann::json::array(), buffers = nlohmann::json::array();
  for (const auto& p : store.params()) {
    const std::string file = p.name + ".ctt";
    io::write_tensor(dir / file, p.value);
    params.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"file", file}});
  }
  for (const auto& [name, t] : store.buffers()) {
    const std::string file = name + ".ctt";
    io::write_tensor(dir / file, t);
    buffers.push_back({{"name", name}, {"shape", t.shape()}, {"file", file}});
  }
  nlohmann::json m{{"version", kCheckpointVersion}, {"step", step},   {"config_hash", config_hash},
                   {"params", params},              {"buffers", buffers}, {"extra", extra}};
  std::ofstream f(dir / "manifest.json", std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write checkpoint manifest in " + dir.string());
  f << m.dump(2) << "\n";
}

struct CheckpointInfo {
  long step = 0;
  std::string config_hash;
  nlohmann::json extra;
  std::string id;  // hash of the manifest
};

/// Loads a checkpoint into a store with the same registered names and shapes.
inline CheckpointInfo load_checkpoint(ParamStore& store, const std::filesystem::path& dir) {
  std::ifstream f(dir / "manifest.json", std::ios::binary);
  if (!f) throw IoError("missing checkpoint manifest in " + dir.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("invalid checkpoint manifest: ") + e.what());
  }
  require(m.value("version", 0) == kCheckpointVersion, "unsupported checkpoint version");
  std::size_t seen = 0;
  for (const auto& e : m.at("params")) {
    const std::string name = e.at("name").get<std::string>();
    Param& p = store.get(name);
    Tensor t = io::read_tensor(dir / e.at("file").get<std::string>());
    require_shape(t.shape() == p.value.shape(), "checkpoint shape mismatch for " + name);
    p.value = std::move(t);
    ++seen;
  }
  require(seen == store.params().size(), "checkpoint does not cover every parameter");
  for (const auto& e : m.at("buffers")) {
    const std::string name = e.at("name").get<std::string>();
    Tensor& b = store.buffer(name);
    Tensor t = io::read_tensor(dir / e.at("file").get<std::string>());
    require_shape(t.shape() == b.shape(), "checkpoint shape mismatch for " + name);
    b = std::move(t);
  }
  return {m.at("step").get<long>(), m.at("config_hash").get<std::string>(), m.value("extra", nlohmann::json{}),
          json_hash(m)};
}

}  // namespace svmar::nn
