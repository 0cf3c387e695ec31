// Copyright 2026 The muse-mil Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Trainable model state: category semantics, expert pool, attention
// projections, retrieval adapter and shared classifier head, plus checkpoint
// serialization in the binary tensor convention.

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "muse/kb.hpp"
#include "muse/optim.hpp"
#include "muse/svti.hpp"

namespace muse {

struct MuseConfig {
  int num_classes = 2;
  Eigen::Index d = 0;
  int experts = 8;
  int selected_experts = 2;
  int heads = 4;
  Eigen::Index hidden = 0;  // classifier hidden width; 0 means d
  double top_patch_percent = 20.0;
  bool softmax_over_all = false;
  bool use_sfse = true;

  Eigen::Index hidden_width() const { return hidden > 0 ? hidden : d; }

  void validate() const {
    if (num_classes < 2) throw ConfigError("model needs at least 2 classes");
    if (d < 1) throw ConfigError("model dimension must be positive");
    if (experts < 1) throw ConfigError("expert count must be positive");
    if (selected_experts < 1 || selected_experts > experts)
      throw ConfigError("selected expert count out of range");
    if (heads < 1 || d % heads != 0)
      throw ConfigError("feature dimension " + std::to_string(d) +
                        " is not divisible by head count " + std::to_string(heads));
    if (!(top_patch_percent > 0.0 && top_patch_percent <= 100.0))
      throw ConfigError("top-patch percentage must lie in (0, 100]");
  }

  nlohmann::json to_json() const {
    return {{"num_classes", num_classes},
            {"d", d},
            {"experts", experts},
            {"selected_experts", selected_experts},
            {"heads", heads},
            {"hidden", hidden},
            {"top_patch_percent", top_patch_percent},
            {"softmax_over_all", softmax_over_all},
            {"use_sfse", use_sfse}};
  }

  static MuseConfig from_json(const nlohmann::json& j) {
    MuseConfig c;
    c.num_classes = j.at("num_classes").get<int>();
    c.d = j.at("d").get<Eigen::Index>();
    c.experts = j.at("experts").get<int>();
    c.selected_experts = j.at("selected_experts").get<int>();
    c.heads = j.at("heads").get<int>();
    c.hidden = j.at("hidden").get<Eigen::Index>();
    c.top_patch_percent = j.at("top_patch_percent").get<double>();
    c.softmax_over_all = j.at("softmax_over_all").get<bool>();
    c.use_sfse = j.at("use_sfse").get<bool>();
    c.validate();
    return c;
  }
};

struct ModelState {
  MuseConfig config;
  std::vector<std::string> class_names;
  CategorySemantics semantics;
  ExpertPool pool;
  AttentionParams attn;
  Adapter adapter;
  Mat mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  AdamW optimizer;
  int epoch = 0;
  int best_epoch = -1;
  double best_metric = 0.0;

  // Visits every trainable tensor in a fixed canonical order.
  void for_each_param(const std::function<void(const std::string&, Mat&)>& fn) {
    fn("dsr.semantics", semantics.matrix);
    for (std::size_t e = 0; e < pool.expert_q.size(); ++e)
      fn("dsr.expert_q." + std::to_string(e), pool.expert_q[e]);
    fn("dsr.router_w", pool.router_w);
    fn("dsr.noise_w", pool.noise_w);
    for (int h = 0; h < attn.heads(); ++h) {
      auto hs = std::to_string(h);
      fn("attn.wq." + hs, attn.wq[static_cast<std::size_t>(h)]);
      fn("attn.wk." + hs, attn.wk[static_cast<std::size_t>(h)]);
      fn("attn.wv." + hs, attn.wv[static_cast<std::size_t>(h)]);
    }
    fn("attn.wo", attn.wo);
    fn("adapter.weight", adapter.weight);
    adapter_bias_mat_ = adapter.bias;
    fn("adapter.bias", adapter_bias_mat_);
    adapter.bias = adapter_bias_mat_.row(0);
    fn("mlp.w1", mlp_w1);
    fn("mlp.b1", mlp_b1);
    fn("mlp.w2", mlp_w2);
    fn("mlp.b2", mlp_b2);
  }

  std::map<std::string, Mat> snapshot_params() {
    std::map<std::string, Mat> out;
    for_each_param([&](const std::string& name, Mat& p) { out[name] = p; });
    return out;
  }

  void restore_params(const std::map<std::string, Mat>& snap) {
    for_each_param([&](const std::string& name, Mat& p) { p = snap.at(name); });
  }

 private:
  Mat adapter_bias_mat_;  // RowVec exposed as a 1 x d tensor during iteration
};

struct ModelVars {
  ad::Var semantics;
  ExpertPoolVars pool;
  AttentionVars attn;
  ad::Var adapter_w, adapter_b;
  ad::Var mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

inline ModelVars lift(ad::Tape& tape, ModelState& model) {
  ModelVars v;
  v.semantics = tape.input(model.semantics.matrix);
  v.pool = lift(tape, model.pool);
  v.attn = lift(tape, model.attn);
  v.adapter_w = tape.input(model.adapter.weight);
  v.adapter_b = tape.input(model.adapter.bias);
  v.mlp_w1 = tape.input(model.mlp_w1);
  v.mlp_b1 = tape.input(model.mlp_b1);
  v.mlp_w2 = tape.input(model.mlp_w2);
  v.mlp_b2 = tape.input(model.mlp_b2);
  return v;
}

// Gradient handles in the same canonical order as for_each_param.
inline std::map<std::string, ad::Var> param_vars(const ModelVars& v, const ModelState& model) {
  std::map<std::string, ad::Var> out;
  out["dsr.semantics"] = v.semantics;
  for (std::size_t e = 0; e < v.pool.expert_q.size(); ++e)
    out["dsr.expert_q." + std::to_string(e)] = v.pool.expert_q[e];
  out["dsr.router_w"] = v.pool.router_w;
  out["dsr.noise_w"] = v.pool.noise_w;
  for (int h = 0; h < model.attn.heads(); ++h) {
    auto hs = std::to_string(h);
    out["attn.wq." + hs] = v.attn.wq[static_cast<std::size_t>(h)];
    out["attn.wk." + hs] = v.attn.wk[static_cast<std::size_t>(h)];
    out["attn.wv." + hs] = v.attn.wv[static_cast<std::size_t>(h)];
  }
  out["attn.wo"] = v.attn.wo;
  out["adapter.weight"] = v.adapter_w;
  out["adapter.bias"] = v.adapter_b;
  out["mlp.w1"] = v.mlp_w1;
  out["mlp.b1"] = v.mlp_b1;
  out["mlp.w2"] = v.mlp_w2;
  out["mlp.b2"] = v.mlp_b2;
  return out;
}

namespace detail {

inline Mat gaussian_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale) {
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = scale * rng.gaussian();
  return m;
}

// Columns [h*d_head, (h+1)*d_head) of the identity: head h reads its slice of
// the feature space, so cue/patch dot products are meaningful at
// initialization (mirrors operating inside an aligned vision-language space).
inline Mat head_slice_identity(Eigen::Index d, Eigen::Index d_head, int head) {
  Mat m = Mat::Zero(d, d_head);
  for (Eigen::Index j = 0; j < d_head; ++j) m(static_cast<Eigen::Index>(head) * d_head + j, j) = 1.0;
  return m;
}

}  // namespace detail

// Builds a freshly initialized model. class_embeddings (e.g. knowledge-base
// class means) seed the category semantics; pass an empty matrix to fall back
// to a random draw.
inline ModelState init_model(const MuseConfig& config, const std::vector<std::string>& class_names,
                             const Mat& class_embeddings, std::uint64_t seed) {
  config.validate();
  if (static_cast<int>(class_names.size()) != config.num_classes)
    throw ConfigError("class name count does not match model config");
  ModelState model;
  model.config = config;
  model.class_names = class_names;
  Rng rng(derive_seed(seed, "init"));
  const Eigen::Index d = config.d;
  const Eigen::Index d_head = d / config.heads;

  if (class_embeddings.size() > 0) {
    if (class_embeddings.rows() != config.num_classes || class_embeddings.cols() != d)
      throw ConfigError("class embedding matrix has the wrong shape");
    model.semantics.matrix = class_embeddings;
  } else {
    model.semantics.matrix = detail::gaussian_matrix(rng, config.num_classes, d,
                                                     1.0 / std::sqrt(static_cast<double>(d)));
  }

  for (int e = 0; e < config.experts; ++e)
    model.pool.expert_q.push_back(Mat::Identity(d, d) +
                                  detail::gaussian_matrix(rng, d, d, 0.05));
  model.pool.router_w = detail::gaussian_matrix(rng, d, config.experts, 0.01);
  model.pool.noise_w = detail::gaussian_matrix(rng, d, config.experts, 0.01);
  model.pool.top_k = config.selected_experts;

  for (int h = 0; h < config.heads; ++h) {
    model.attn.wq.push_back(detail::head_slice_identity(d, d_head, h) +
                            detail::gaussian_matrix(rng, d, d_head, 0.02));
    model.attn.wk.push_back(detail::head_slice_identity(d, d_head, h) +
                            detail::gaussian_matrix(rng, d, d_head, 0.02));
    model.attn.wv.push_back(detail::head_slice_identity(d, d_head, h) +
                            detail::gaussian_matrix(rng, d, d_head, 0.02));
  }
  model.attn.wo = Mat::Identity(d, d) + detail::gaussian_matrix(rng, d, d, 0.02);
  model.attn.top_patch_percent = config.use_sfse ? config.top_patch_percent : 100.0;
  model.attn.softmax_over_all = config.softmax_over_all;

  model.adapter = Adapter::identity(d);

  const Eigen::Index hidden = config.hidden_width();
  model.mlp_w1 = detail::gaussian_matrix(rng, d, hidden, std::sqrt(2.0 / static_cast<double>(d + hidden)));
  model.mlp_b1 = Mat::Zero(1, hidden);
  model.mlp_w2 = detail::gaussian_matrix(rng, hidden, config.num_classes,
                                         std::sqrt(2.0 / static_cast<double>(hidden + config.num_classes)));
  model.mlp_b2 = Mat::Zero(1, config.num_classes);
  return model;
}

// Shared classifier head: one hidden tanh layer. The same parameters serve the
// primary prior and every auxiliary prior.
inline ad::Var classify_graph(ad::Tape& tape, ad::Var f, const ModelVars& vars) {
  ad::Var hidden = tape.tanh(tape.add(tape.matmul(f, vars.mlp_w1), vars.mlp_b1));
  return tape.add(tape.matmul(hidden, vars.mlp_w2), vars.mlp_b2);
}

inline RowVec classify(const RowVec& f, ModelState& model) {
  if (!f.allFinite()) throw DataError("classifier input has non-finite entries");
  ad::Tape tape;
  auto vars = lift(tape, model);
  ad::Var z = classify_graph(tape, tape.input(f), vars);
  return tape.val(z).row(0);
}

inline ad::Var fuse_logits_graph(ad::Tape& tape, ad::Var z, ad::Var z_aux) {
  return tape.scale(tape.add(z, z_aux), 0.5);
}

inline RowVec fuse_logits(const RowVec& z, const RowVec& z_aux) {
  if (z.size() != z_aux.size()) throw ConfigError("logit fusion requires equal lengths");
  return (z + z_aux) / 2.0;
}

inline RowVec softmax_row(const RowVec& z) {
  RowVec out = (z.array() - z.maxCoeff()).exp();
  return out / out.sum();
}

// --- checkpoints -------------------------------------------------------------
// <base>.ckpt.bin holds all tensors (including optimizer moments) as raw
// little-endian float64, row-major, back to back; <base>.ckpt.json is the
// index. Bit-exact round trip.

inline void save_checkpoint(ModelState& model, const std::filesystem::path& base) {
  std::vector<std::pair<std::string, const Mat*>> tensors;
  model.for_each_param([&](const std::string& name, Mat& p) { tensors.emplace_back(name, &p); });
  for (const auto& [name, m] : model.optimizer.m) tensors.emplace_back("adam.m." + name, &m);
  for (const auto& [name, v] : model.optimizer.v) tensors.emplace_back("adam.v." + name, &v);

  nlohmann::json index;
  index["format"] = "muse-checkpoint-v1";
  index["kind"] = "muse";
  index["dtype"] = "f64";
  index["config"] = model.config.to_json();
  index["class_names"] = model.class_names;
  index["epoch"] = model.epoch;
  index["best_epoch"] = model.best_epoch;
  index["best_metric"] = model.best_metric;
  index["adam_step"] = model.optimizer.step;

  std::ofstream bin(base.string() + ".ckpt.bin", std::ios::binary | std::ios::trunc);
  if (!bin) throw DataError("cannot write checkpoint: " + base.string());
  nlohmann::json tensor_index = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, mat] : tensors) {
    MatD rm = *mat;
    detail::to_little_endian(rm.data(), static_cast<std::size_t>(rm.size()));
    bin.write(reinterpret_cast<const char*>(rm.data()),
              static_cast<std::streamsize>(sizeof(double) * rm.size()));
    tensor_index.push_back({{"name", name},
                            {"rows", mat->rows()},
                            {"cols", mat->cols()},
                            {"offset", offset}});
    offset += sizeof(double) * static_cast<std::uint64_t>(rm.size());
  }
  index["tensors"] = tensor_index;
  save_json(base.string() + ".ckpt.json", index);
}

inline ModelState load_checkpoint(const std::filesystem::path& base) {
  auto index = load_json(base.string() + ".ckpt.json");
  if (index.value("format", "") != "muse-checkpoint-v1" || index.value("kind", "") != "muse")
    throw FormatError("not a muse checkpoint: " + base.string());
  ModelState model;
  model.config = MuseConfig::from_json(index.at("config"));
  model.class_names = index.at("class_names").get<std::vector<std::string>>();
  model.epoch = index.at("epoch").get<int>();
  model.best_epoch = index.at("best_epoch").get<int>();
  model.best_metric = index.at("best_metric").get<double>();
  model.optimizer.step = index.at("adam_step").get<long>();

  std::ifstream bin(base.string() + ".ckpt.bin", std::ios::binary);
  if (!bin) throw DataError("cannot open checkpoint: " + base.string());
  std::map<std::string, Mat> loaded;
  for (const auto& t : index.at("tensors")) {
    auto rows = t.at("rows").get<Eigen::Index>();
    auto cols = t.at("cols").get<Eigen::Index>();
    MatD rm(rows, cols);
    bin.seekg(static_cast<std::streamoff>(t.at("offset").get<std::uint64_t>()));
    bin.read(reinterpret_cast<char*>(rm.data()),
             static_cast<std::streamsize>(sizeof(double) * rm.size()));
    if (!bin) throw FormatError("checkpoint tensor truncated: " + t.at("name").get<std::string>());
    detail::to_little_endian(rm.data(), static_cast<std::size_t>(rm.size()));
    loaded[t.at("name").get<std::string>()] = rm;
  }

  const Eigen::Index d = model.config.d;
  model.pool.expert_q.resize(static_cast<std::size_t>(model.config.experts));
  model.pool.top_k = model.config.selected_experts;
  model.attn.wq.resize(static_cast<std::size_t>(model.config.heads));
  model.attn.wk.resize(static_cast<std::size_t>(model.config.heads));
  model.attn.wv.resize(static_cast<std::size_t>(model.config.heads));
  model.attn.top_patch_percent =
      model.config.use_sfse ? model.config.top_patch_percent : 100.0;
  model.attn.softmax_over_all = model.config.softmax_over_all;
  model.adapter = Adapter::identity(d);
  model.for_each_param([&](const std::string& name, Mat& p) {
    auto it = loaded.find(name);
    if (it == loaded.end()) throw FormatError("checkpoint missing tensor: " + name);
    p = it->second;
  });
  for (const auto& [name, mat] : loaded) {
    if (name.rfind("adam.m.", 0) == 0) model.optimizer.m[name.substr(7)] = mat;
    if (name.rfind("adam.v.", 0) == 0) model.optimizer.v[name.substr(7)] = mat;
  }
  return model;
}

}  // namespace muse
