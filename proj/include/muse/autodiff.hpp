// Copyright 2026 The muse-mil Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Minimal reverse-mode autodiff over dense double matrices. Graphs are built
// eagerly per optimizer step (define-by-run); values are available as soon as
// an op is recorded, which the routing and patch-filtering stages rely on to
// pick index sets that the backward pass then treats as constants.

#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "muse/error.hpp"

namespace muse::ad {

using Mat = Eigen::MatrixXd;

struct Var {
  int idx = -1;
  bool valid() const { return idx >= 0; }
};

class Tape {
 public:
  Tape() { nodes_.reserve(256); }

  Var input(Mat value) {
    nodes_.push_back(Node{std::move(value), {}, nullptr});
    nodes_.back().grad = Mat::Zero(nodes_.back().value.rows(), nodes_.back().value.cols());
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  const Mat& val(Var v) const { return nodes_[v.idx].value; }
  const Mat& grad(Var v) const { return nodes_[v.idx].grad; }

  // --- structural ops -------------------------------------------------

  Var matmul(Var a, Var b) {
    Var out = input(val(a) * val(b));
    nodes_[out.idx].back = [a, b, out](Tape& t) {
      const Mat& g = t.nodes_[out.idx].grad;
      t.nodes_[a.idx].grad.noalias() += g * t.nodes_[b.idx].value.transpose();
      t.nodes_[b.idx].grad.noalias() += t.nodes_[a.idx].value.transpose() * g;
    };
    return out;
  }

  Var transpose(Var a) {
    Var out = input(val(a).transpose());
    nodes_[out.idx].back = [a, out](Tape& t) {
      t.nodes_[a.idx].grad += t.nodes_[out.idx].grad.transpose();
    };
    return out;
  }

  Var add(Var a, Var b) {
    Var out = input(val(a) + val(b));
    nodes_[out.idx].back = [a, b, out](Tape& t) {
      t.nodes_[a.idx].grad += t.nodes_[out.idx].grad;
      t.nodes_[b.idx].grad += t.nodes_[out.idx].grad;
    };
    return out;
  }

  Var sub(Var a, Var b) {
    Var out = input(val(a) - val(b));
    nodes_[out.idx].back = [a, b, out](Tape& t) {
      t.nodes_[a.idx].grad += t.nodes_[out.idx].grad;
      t.nodes_[b.idx].grad -= t.nodes_[out.idx].grad;
    };
    return out;
  }

  Var cmul(Var a, Var b) {
    Var out = input(val(a).cwiseProduct(val(b)));
    nodes_[out.idx].back = [a, b, out](Tape& t) {
      const Mat& g = t.nodes_[out.idx].grad;
      t.nodes_[a.idx].grad += g.cwiseProduct(t.nodes_[b.idx].value);
      t.nodes_[b.idx].grad += g.cwiseProduct(t.nodes_[a.idx].value);
    };
    return out;
  }

  Var scale(Var a, double s) {
    Var out = input(val(a) * s);
    nodes_[out.idx].back = [a, out, s](Tape& t) {
      t.nodes_[a.idx].grad += s * t.nodes_[out.idx].grad;
    };
    return out;
  }

  Var row(Var a, int i) {
    Var out = input(val(a).row(i));
    nodes_[out.idx].back = [a, out, i](Tape& t) {
      t.nodes_[a.idx].grad.row(i) += t.nodes_[out.idx].grad.row(0);
    };
    return out;
  }

  Var gather_rows(Var a, std::vector<int> idx) {
    Mat v(static_cast<Eigen::Index>(idx.size()), val(a).cols());
    for (std::size_t j = 0; j < idx.size(); ++j) v.row(static_cast<Eigen::Index>(j)) = val(a).row(idx[j]);
    Var out = input(std::move(v));
    nodes_[out.idx].back = [a, out, idx = std::move(idx)](Tape& t) {
      for (std::size_t j = 0; j < idx.size(); ++j)
        t.nodes_[a.idx].grad.row(idx[j]) += t.nodes_[out.idx].grad.row(static_cast<Eigen::Index>(j));
    };
    return out;
  }

  Var gather_cols(Var a, std::vector<int> idx) {
    Mat v(val(a).rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) v.col(static_cast<Eigen::Index>(j)) = val(a).col(idx[j]);
    Var out = input(std::move(v));
    nodes_[out.idx].back = [a, out, idx = std::move(idx)](Tape& t) {
      for (std::size_t j = 0; j < idx.size(); ++j)
        t.nodes_[a.idx].grad.col(idx[j]) += t.nodes_[out.idx].grad.col(static_cast<Eigen::Index>(j));
    };
    return out;
  }

  Var concat_cols(std::vector<Var> parts) {
    Eigen::Index rows = val(parts.front()).rows(), cols = 0;
    for (Var p : parts) cols += val(p).cols();
    Mat v(rows, cols);
    Eigen::Index at = 0;
    for (Var p : parts) {
      v.middleCols(at, val(p).cols()) = val(p);
      at += val(p).cols();
    }
    Var out = input(std::move(v));
    nodes_[out.idx].back = [parts = std::move(parts), out](Tape& t) {
      Eigen::Index at = 0;
      for (Var p : parts) {
        Eigen::Index w = t.nodes_[p.idx].value.cols();
        t.nodes_[p.idx].grad += t.nodes_[out.idx].grad.middleCols(at, w);
        at += w;
      }
    };
    return out;
  }

  Var concat_rows(std::vector<Var> parts) {
    Eigen::Index cols = val(parts.front()).cols(), rows = 0;
    for (Var p : parts) rows += val(p).rows();
    Mat v(rows, cols);
    Eigen::Index at = 0;
    for (Var p : parts) {
      v.middleRows(at, val(p).rows()) = val(p);
      at += val(p).rows();
    }
    Var out = input(std::move(v));
    nodes_[out.idx].back = [parts = std::move(parts), out](Tape& t) {
      Eigen::Index at = 0;
      for (Var p : parts) {
        Eigen::Index h = t.nodes_[p.idx].value.rows();
        t.nodes_[p.idx].grad += t.nodes_[out.idx].grad.middleRows(at, h);
        at += h;
      }
    };
    return out;
  }

  // --- nonlinearities --------------------------------------------------

  // Row-wise softmax with max-shift stabilization.
  Var softmax(Var a) {
    Mat v = val(a);
    for (Eigen::Index r = 0; r < v.rows(); ++r) {
      double mx = v.row(r).maxCoeff();
      v.row(r) = (v.row(r).array() - mx).exp();
      v.row(r) /= v.row(r).sum();
    }
    Var out = input(std::move(v));
    nodes_[out.idx].back = [a, out](Tape& t) {
      const Mat& s = t.nodes_[out.idx].value;
      const Mat& g = t.nodes_[out.idx].grad;
      for (Eigen::Index r = 0; r < s.rows(); ++r) {
        double inner = g.row(r).dot(s.row(r));
        t.nodes_[a.idx].grad.row(r) +=
            s.row(r).cwiseProduct((g.row(r).array() - inner).matrix());
      }
    };
    return out;
  }

  Var softplus(Var a) {
    Mat v = val(a).unaryExpr([](double x) {
      if (x > 30.0) return x;
      if (x < -30.0) return std::exp(x);
      return std::log1p(std::exp(x));
    });
    Var out = input(std::move(v));
    nodes_[out.idx].back = [a, out](Tape& t) {
      Mat sig = t.nodes_[a.idx].value.unaryExpr(
          [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
      t.nodes_[a.idx].grad += t.nodes_[out.idx].grad.cwiseProduct(sig);
    };
    return out;
  }

  Var tanh(Var a) {
    Var out = input(val(a).array().tanh().matrix());
    nodes_[out.idx].back = [a, out](Tape& t) {
      const Mat& y = t.nodes_[out.idx].value;
      t.nodes_[a.idx].grad += t.nodes_[out.idx].grad.cwiseProduct(
          (1.0 - y.array().square()).matrix());
    };
    return out;
  }

  Var sigmoid(Var a) {
    Var out = input(val(a).unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); }));
    nodes_[out.idx].back = [a, out](Tape& t) {
      const Mat& y = t.nodes_[out.idx].value;
      t.nodes_[a.idx].grad += t.nodes_[out.idx].grad.cwiseProduct(
          (y.array() * (1.0 - y.array())).matrix());
    };
    return out;
  }

  // --- reductions -------------------------------------------------------

  // n x d -> 1 x d column means.
  Var mean_rows(Var a) {
    const Mat& v = val(a);
    Var out = input(v.colwise().mean());
    double inv_n = 1.0 / static_cast<double>(v.rows());
    nodes_[out.idx].back = [a, out, inv_n](Tape& t) {
      const Mat& g = t.nodes_[out.idx].grad;
      t.nodes_[a.idx].grad.rowwise() += (inv_n * g).row(0);
    };
    return out;
  }

  // n x d -> 1 x d column maxima; gradient flows to the (first) argmax row.
  Var max_rows(Var a) {
    const Mat& v = val(a);
    Mat m(1, v.cols());
    std::vector<int> argmax(static_cast<std::size_t>(v.cols()));
    for (Eigen::Index c = 0; c < v.cols(); ++c) {
      Eigen::Index r;
      m(0, c) = v.col(c).maxCoeff(&r);
      argmax[static_cast<std::size_t>(c)] = static_cast<int>(r);
    }
    Var out = input(std::move(m));
    nodes_[out.idx].back = [a, out, argmax = std::move(argmax)](Tape& t) {
      const Mat& g = t.nodes_[out.idx].grad;
      for (Eigen::Index c = 0; c < g.cols(); ++c)
        t.nodes_[a.idx].grad(argmax[static_cast<std::size_t>(c)], c) += g(0, c);
    };
    return out;
  }

  // --- scalar heads (1x1 outputs) ---------------------------------------

  // Cross-entropy with logits: z is 1 x C -> 1 x 1.
  Var cross_entropy(Var z, int target) {
    const Mat& v = val(z);
    double mx = v.maxCoeff();
    double lse = mx + std::log((v.array() - mx).exp().sum());
    Mat loss(1, 1);
    loss(0, 0) = lse - v(0, target);
    Var out = input(std::move(loss));
    nodes_[out.idx].back = [z, out, target](Tape& t) {
      const Mat& zz = t.nodes_[z.idx].value;
      double mx2 = zz.maxCoeff();
      Mat sm = (zz.array() - mx2).exp().matrix();
      sm /= sm.sum();
      sm(0, target) -= 1.0;
      t.nodes_[z.idx].grad += t.nodes_[out.idx].grad(0, 0) * sm;
    };
    return out;
  }

  // Cosine similarity of two 1 x d rows -> 1 x 1; returns 0 with zero
  // gradients when either norm vanishes.
  Var cosine(Var a, Var b) {
    const Mat& av = val(a);
    const Mat& bv = val(b);
    double na = av.norm(), nb = bv.norm();
    Mat c(1, 1);
    bool degenerate = na * nb < 1e-300;
    c(0, 0) = degenerate ? 0.0 : av.row(0).dot(bv.row(0)) / (na * nb);
    Var out = input(std::move(c));
    nodes_[out.idx].back = [a, b, out, na, nb, degenerate](Tape& t) {
      if (degenerate) return;
      double g = t.nodes_[out.idx].grad(0, 0);
      double cv = t.nodes_[out.idx].value(0, 0);
      const Mat& av2 = t.nodes_[a.idx].value;
      const Mat& bv2 = t.nodes_[b.idx].value;
      t.nodes_[a.idx].grad += g * (bv2 / (na * nb) - cv * av2 / (na * na));
      t.nodes_[b.idx].grad += g * (av2 / (na * nb) - cv * bv2 / (nb * nb));
    };
    return out;
  }

  Var sum(Var a) {
    Mat s(1, 1);
    s(0, 0) = val(a).sum();
    Var out = input(std::move(s));
    nodes_[out.idx].back = [a, out](Tape& t) {
      t.nodes_[a.idx].grad.array() += t.nodes_[out.idx].grad(0, 0);
    };
    return out;
  }

  // --- backward ----------------------------------------------------------

  void backward(Var root) {
    if (val(root).size() != 1)
      throw InternalError("backward requires a scalar (1x1) root");
    nodes_[root.idx].grad(0, 0) = 1.0;
    for (int i = root.idx; i >= 0; --i)
      if (nodes_[i].back) nodes_[i].back(*this);
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void(Tape&)> back;
  };
  std::vector<Node> nodes_;
};

}  // namespace muse::ad
