// Copyright 2026 The muse-mil Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Decompositional semantic refinement: a pool of expert query matrices, a
// noisy router scoring experts per category, and top-k decomposition of each
// category's semantics into fine-grained query cues.

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "muse/autodiff.hpp"
#include "muse/error.hpp"
#include "muse/rng.hpp"

namespace muse {

using ad::Mat;
using RowVec = Eigen::RowVectorXd;

// Interface for an external frozen text encoder (prompt-tuning backend).
// Desk-scale builds use the direct backend; implementations of this interface
// are intentionally out of scope.
struct TextPromptEncoder {
  virtual ~TextPromptEncoder() = default;
  // Encodes M prompt embeddings plus a class name into one d-vector.
  virtual RowVec encode(const Mat& prompt_embeddings, const std::string& class_name) const = 0;
};

// Category semantics D. Under the "direct" backend the matrix itself is the
// trainable representation; under "prompt-encoder" per-class prompt embeddings
// would be encoded via an external model.
struct CategorySemantics {
  Mat matrix;  // |C| x d
  std::string backend = "direct";
  int prompt_tokens = 0;                 // M (prompt-encoder backend only)
  std::vector<Mat> prompt_embeddings;    // per class: M x d
  const TextPromptEncoder* encoder = nullptr;

  void validate() const {
    if (backend != "direct" && backend != "prompt-encoder")
      throw ConfigError("unknown semantics backend: " + backend);
    if (matrix.rows() < 1) throw DataError("category semantics matrix is empty");
    if (!matrix.allFinite()) throw DataError("category semantics matrix has non-finite entries");
  }

  Mat materialize(const std::vector<std::string>& class_names) const {
    if (backend == "direct") return matrix;
    if (encoder == nullptr)
      throw ConfigError("prompt-encoder backend requires a text encoder; "
                        "use the direct backend at desk scale");
    Mat out(static_cast<Eigen::Index>(class_names.size()), matrix.cols());
    for (std::size_t c = 0; c < class_names.size(); ++c)
      out.row(static_cast<Eigen::Index>(c)) = encoder->encode(prompt_embeddings[c], class_names[c]);
    return out;
  }
};

struct ExpertPool {
  std::vector<Mat> expert_q;  // R matrices, each d x d
  Mat router_w;               // d x R, the linear router projection
  Mat noise_w;                // d x R, scales input-dependent gating noise
  int top_k = 2;

  int experts() const { return static_cast<int>(expert_q.size()); }

  void validate() const {
    if (expert_q.empty()) throw ConfigError("expert pool is empty");
    if (top_k < 1 || top_k > experts())
      throw ConfigError("selected expert count k=" + std::to_string(top_k) +
                        " out of range for R=" + std::to_string(experts()));
    for (const auto& w : expert_q)
      if (!w.allFinite()) throw DataError("expert query matrix has non-finite entries");
    if (!router_w.allFinite() || !noise_w.allFinite())
      throw DataError("router parameters have non-finite entries");
  }
};

struct RoutingResult {
  Mat scores;                                    // |C'| x R
  std::vector<std::vector<int>> selected;        // per row: k expert indices, score-descending
  std::vector<std::vector<double>> selected_scores;
};

// Top-k indices of one score row, ordered by descending score; ties break
// toward the lower expert index.
inline std::vector<int> top_k_indices(const RowVec& scores, int k) {
  std::vector<int> order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  order.resize(static_cast<std::size_t>(k));
  return order;
}

// Router gating noise: eta ~ N(0,1) per entry, seeded, scaled elementwise by
// softplus(D * noise_w). Training-only; inference passes noise_on=false.
inline Mat routing_noise(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng(seed);
  Mat eta(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) eta(r, c) = rng.gaussian();
  return eta;
}

struct ExpertPoolVars {
  std::vector<ad::Var> expert_q;
  ad::Var router_w;
  ad::Var noise_w;
};

inline ExpertPoolVars lift(ad::Tape& tape, const ExpertPool& pool) {
  ExpertPoolVars v;
  for (const auto& w : pool.expert_q) v.expert_q.push_back(tape.input(w));
  v.router_w = tape.input(pool.router_w);
  v.noise_w = tape.input(pool.noise_w);
  return v;
}

// Differentiable routing. Expert selection is made on forward values and is a
// constant of the graph; gradients flow through the score matrix.
inline RoutingResult route_graph(ad::Tape& tape, ad::Var semantics, const ExpertPoolVars& pool,
                                 int top_k, int experts, bool noise_on, std::uint64_t seed,
                                 ad::Var* scores_out) {
  if (top_k > experts)
    throw ConfigError("selected expert count k=" + std::to_string(top_k) +
                      " exceeds expert count R=" + std::to_string(experts));
  ad::Var scores = tape.matmul(semantics, pool.router_w);
  if (noise_on) {
    ad::Var spread = tape.softplus(tape.matmul(semantics, pool.noise_w));
    ad::Var eta = tape.input(routing_noise(tape.val(scores).rows(), tape.val(scores).cols(), seed));
    scores = tape.add(scores, tape.cmul(eta, spread));
  }
  RoutingResult result;
  result.scores = tape.val(scores);
  for (Eigen::Index r = 0; r < result.scores.rows(); ++r) {
    auto idx = top_k_indices(result.scores.row(r), top_k);
    std::vector<double> vals;
    for (int i : idx) vals.push_back(result.scores(r, i));
    result.selected.push_back(std::move(idx));
    result.selected_scores.push_back(std::move(vals));
  }
  if (scores_out) *scores_out = scores;
  return result;
}

// Value-level routing over category semantics.
inline RoutingResult route(const Mat& semantics, const ExpertPool& pool, bool noise_on,
                           std::uint64_t seed) {
  pool.validate();
  ad::Tape tape;
  ad::Var d = tape.input(semantics);
  auto vars = lift(tape, pool);
  return route_graph(tape, d, vars, pool.top_k, pool.experts(), noise_on, seed, nullptr);
}

// Semantic decomposition: cue j = class semantics times the j-th selected
// expert query matrix, in routing (score-descending) order.
inline std::vector<ad::Var> decompose_graph(ad::Tape& tape, ad::Var class_row,
                                            const std::vector<int>& selected,
                                            const ExpertPoolVars& pool) {
  std::vector<ad::Var> cues;
  for (int e : selected) {
    if (e < 0 || e >= static_cast<int>(pool.expert_q.size()))
      throw InternalError("selected expert index out of range: " + std::to_string(e));
    cues.push_back(tape.matmul(class_row, pool.expert_q[static_cast<std::size_t>(e)]));
  }
  return cues;
}

inline std::vector<RowVec> decompose(const RowVec& class_semantics,
                                     const std::vector<int>& selected, const ExpertPool& pool) {
  ad::Tape tape;
  ad::Var d = tape.input(class_semantics);
  auto vars = lift(tape, pool);
  auto cues = decompose_graph(tape, d, selected, vars);
  std::vector<RowVec> out;
  for (auto v : cues) out.push_back(tape.val(v).row(0));
  return out;
}

}  // namespace muse
