// Copyright 2026 The muse-mil Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Sample-wise vision-text interaction: multi-head cross-attention from
// semantic cues onto patch features with per-head top-r% patch filtering,
// score-weighted cue fusion and class averaging into the semantic prior f.

#include <cmath>
#include <vector>

#include "muse/dsr.hpp"
#include "muse/error.hpp"

namespace muse {

struct AttentionParams {
  std::vector<Mat> wq, wk, wv;  // per head: d x d_head
  Mat wo;                       // (H * d_head) x d
  double top_patch_percent = 20.0;  // r, in (0, 100]
  // When true, softmax normalizes over all N patch scores and the retained
  // entries are used unrenormalized (alternative reading of the filtering
  // order); default normalizes over retained scores only.
  bool softmax_over_all = false;

  int heads() const { return static_cast<int>(wq.size()); }
  Eigen::Index d_head() const { return wq.empty() ? 0 : wq.front().cols(); }

  void validate(Eigen::Index d) const {
    if (wq.empty() || wk.size() != wq.size() || wv.size() != wq.size())
      throw ConfigError("attention projections must cover every head");
    if (static_cast<Eigen::Index>(heads()) * d_head() != d)
      throw ConfigError("heads * d_head must equal d (" + std::to_string(heads()) + " * " +
                        std::to_string(d_head()) + " != " + std::to_string(d) + ")");
    if (!(top_patch_percent > 0.0 && top_patch_percent <= 100.0))
      throw ConfigError("top-patch percentage must lie in (0, 100]");
    for (const auto* group : {&wq, &wk, &wv})
      for (const auto& m : *group)
        if (!m.allFinite()) throw DataError("attention projection has non-finite entries");
    if (!wo.allFinite()) throw DataError("output projection has non-finite entries");
  }
};

struct AttentionVars {
  std::vector<ad::Var> wq, wk, wv;
  ad::Var wo;
};

inline AttentionVars lift(ad::Tape& tape, const AttentionParams& p) {
  AttentionVars v;
  for (const auto& m : p.wq) v.wq.push_back(tape.input(m));
  for (const auto& m : p.wk) v.wk.push_back(tape.input(m));
  for (const auto& m : p.wv) v.wv.push_back(tape.input(m));
  v.wo = tape.input(p.wo);
  return v;
}

inline Eigen::Index keep_count(Eigen::Index n, double r_percent) {
  auto kept = static_cast<Eigen::Index>(std::floor(static_cast<double>(n) * r_percent / 100.0));
  return std::max<Eigen::Index>(1, kept);
}

// Retained patch indices for one head: the n_keep highest scores, ties toward
// the lower patch index; reported in ascending index order (set semantics).
inline std::vector<int> retained_indices(const RowVec& scores, Eigen::Index n_keep) {
  auto idx = top_k_indices(scores, static_cast<int>(n_keep));
  std::sort(idx.begin(), idx.end());
  return idx;
}

// Cross-attention from one cue (1 x d) onto the bag (N x d). The retained
// index sets are chosen on forward values; backward treats them as constants.
inline ad::Var cross_attend_graph(ad::Tape& tape, ad::Var cue, ad::Var bag,
                                  const AttentionVars& attn, const AttentionParams& params,
                                  std::vector<std::vector<int>>* retained_out = nullptr) {
  const Eigen::Index n = tape.val(bag).rows();
  const Eigen::Index n_keep = keep_count(n, params.top_patch_percent);
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(params.d_head()));
  std::vector<ad::Var> heads;
  for (int h = 0; h < params.heads(); ++h) {
    ad::Var q = tape.matmul(cue, attn.wq[static_cast<std::size_t>(h)]);
    ad::Var keys = tape.matmul(bag, attn.wk[static_cast<std::size_t>(h)]);
    ad::Var scores = tape.scale(tape.matmul(q, tape.transpose(keys)), inv_sqrt_dh);
    auto idx = retained_indices(tape.val(scores).row(0), n_keep);
    if (retained_out) retained_out->push_back(idx);
    ad::Var weights;
    if (params.softmax_over_all) {
      weights = tape.gather_cols(tape.softmax(scores), idx);
    } else {
      weights = tape.softmax(tape.gather_cols(scores, idx));
    }
    ad::Var values = tape.matmul(tape.gather_rows(bag, idx), attn.wv[static_cast<std::size_t>(h)]);
    heads.push_back(tape.matmul(weights, values));
  }
  return tape.matmul(tape.concat_cols(std::move(heads)), attn.wo);
}

inline RowVec cross_attend(const RowVec& cue, const Mat& bag, const AttentionParams& params,
                           std::vector<std::vector<int>>* retained_out = nullptr) {
  params.validate(bag.cols());
  if (bag.rows() < 1) throw DataError("cross-attention requires at least one patch");
  ad::Tape tape;
  ad::Var c = tape.input(cue);
  ad::Var b = tape.input(bag);
  auto vars = lift(tape, params);
  ad::Var out = cross_attend_graph(tape, c, b, vars, params, retained_out);
  return tape.val(out).row(0);
}

// Combines the k per-cue fused vectors with softmax weights over their raw
// routing scores.
inline ad::Var fuse_cues_graph(ad::Tape& tape, const std::vector<ad::Var>& fused,
                               ad::Var raw_scores) {
  ad::Var weights = tape.softmax(raw_scores);  // 1 x k
  ad::Var stacked = tape.concat_rows(fused);   // k x d
  return tape.matmul(weights, stacked);        // 1 x d
}

inline RowVec fuse_cues(const std::vector<RowVec>& fused, const std::vector<double>& scores) {
  if (fused.empty() || fused.size() != scores.size())
    throw ConfigError("fuse_cues requires matching nonempty cue and score lists");
  ad::Tape tape;
  std::vector<ad::Var> fv;
  for (const auto& f : fused) fv.push_back(tape.input(f));
  Mat s(1, static_cast<Eigen::Index>(scores.size()));
  for (std::size_t j = 0; j < scores.size(); ++j) s(0, static_cast<Eigen::Index>(j)) = scores[j];
  ad::Var out = fuse_cues_graph(tape, fv, tape.input(s));
  return tape.val(out).row(0);
}

struct SemanticPrior {
  RowVec f;                       // final prior, mean of per-class priors
  Mat class_priors;               // |C'| x d, rows f_i
  std::vector<std::vector<RowVec>> cue_priors;        // per class: k fused vectors f_ij
  std::vector<std::vector<double>> fusion_weights;    // per class: softmax(S_ij)
  RoutingResult routing;

  void check() const {
    for (const auto& w : fusion_weights) {
      double total = 0.0;
      for (double x : w) total += x;
      if (std::abs(total - 1.0) > 1e-6)
        throw InternalError("fusion weights do not sum to 1");
    }
  }
};

struct PriorGraph {
  ad::Var f;
  ad::Var scores;                       // router score matrix
  std::vector<ad::Var> class_priors;    // f_i vars
  std::vector<std::vector<ad::Var>> cue_priors;  // per class: f_ij vars
  RoutingResult routing;
  std::vector<std::vector<std::vector<int>>> retained;  // [class][cue][head] index sets
};

// Full prior composition: route -> decompose -> cross-attend -> fuse per
// class, then average class priors. When use_sfse is false the DSR stage is
// bypassed: each class contributes its raw semantics row as a single cue.
inline PriorGraph forward_prior_graph(ad::Tape& tape, ad::Var semantics, ad::Var bag,
                                      const ExpertPoolVars& pool_vars, const ExpertPool& pool,
                                      const AttentionVars& attn_vars,
                                      const AttentionParams& attn, bool use_sfse, bool noise_on,
                                      std::uint64_t seed) {
  PriorGraph graph;
  const Eigen::Index num_rows = tape.val(semantics).rows();
  if (use_sfse) {
    graph.routing = route_graph(tape, semantics, pool_vars, pool.top_k, pool.experts(), noise_on,
                                seed, &graph.scores);
  }
  for (Eigen::Index c = 0; c < num_rows; ++c) {
    ad::Var class_row = tape.row(semantics, static_cast<int>(c));
    ad::Var f_i;
    std::vector<std::vector<int>> retained_class;
    if (use_sfse) {
      auto cues = decompose_graph(tape, class_row, graph.routing.selected[static_cast<std::size_t>(c)],
                                  pool_vars);
      std::vector<ad::Var> fused;
      for (auto cue : cues) {
        std::vector<std::vector<int>> retained_cue;
        fused.push_back(cross_attend_graph(tape, cue, bag, attn_vars, attn, &retained_cue));
        for (auto& r : retained_cue) retained_class.push_back(std::move(r));
      }
      ad::Var sel = tape.gather_cols(tape.row(graph.scores, static_cast<int>(c)),
                                     graph.routing.selected[static_cast<std::size_t>(c)]);
      f_i = fuse_cues_graph(tape, fused, sel);
      graph.cue_priors.push_back(std::move(fused));
    } else {
      // Traditional interaction: the class row itself is the single cue and
      // no patches are filtered out.
      AttentionParams unfiltered = attn;
      unfiltered.top_patch_percent = 100.0;
      std::vector<std::vector<int>> retained_cue;
      f_i = cross_attend_graph(tape, class_row, bag, attn_vars, unfiltered, &retained_cue);
      for (auto& r : retained_cue) retained_class.push_back(std::move(r));
      graph.cue_priors.push_back({f_i});
    }
    graph.class_priors.push_back(f_i);
    graph.retained.push_back(std::move(retained_class));
  }
  graph.f = num_rows == 1 ? graph.class_priors.front()
                          : tape.mean_rows(tape.concat_rows(graph.class_priors));
  return graph;
}

inline SemanticPrior forward_prior(const Mat& semantics, const Mat& bag, const ExpertPool& pool,
                                   const AttentionParams& attn, bool use_sfse, bool noise_on,
                                   std::uint64_t seed) {
  pool.validate();
  attn.validate(bag.cols());
  ad::Tape tape;
  ad::Var d = tape.input(semantics);
  ad::Var b = tape.input(bag);
  auto pool_vars = lift(tape, pool);
  auto attn_vars = lift(tape, attn);
  auto graph = forward_prior_graph(tape, d, b, pool_vars, pool, attn_vars, attn, use_sfse,
                                   noise_on, seed);
  SemanticPrior prior;
  prior.f = tape.val(graph.f).row(0);
  prior.class_priors.resize(static_cast<Eigen::Index>(graph.class_priors.size()), semantics.cols());
  for (std::size_t c = 0; c < graph.class_priors.size(); ++c)
    prior.class_priors.row(static_cast<Eigen::Index>(c)) = tape.val(graph.class_priors[c]).row(0);
  for (const auto& cues : graph.cue_priors) {
    std::vector<RowVec> rows;
    for (auto v : cues) rows.push_back(tape.val(v).row(0));
    prior.cue_priors.push_back(std::move(rows));
  }
  prior.routing = graph.routing;
  if (use_sfse) {
    for (std::size_t c = 0; c < graph.routing.selected.size(); ++c) {
      const auto& raw = graph.routing.selected_scores[c];
      double mx = *std::max_element(raw.begin(), raw.end());
      std::vector<double> w(raw.size());
      double total = 0.0;
      for (std::size_t j = 0; j < raw.size(); ++j) {
        w[j] = std::exp(raw[j] - mx);
        total += w[j];
      }
      for (auto& x : w) x /= total;
      prior.fusion_weights.push_back(std::move(w));
    }
  }
  if (!prior.f.allFinite()) throw DataError("semantic prior has non-finite entries");
  return prior;
}

}  // namespace muse
