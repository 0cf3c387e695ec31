// Copyright 2026 The muse-mil Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Adam with decoupled weight decay over named parameter tensors.

#include <cmath>
#include <map>
#include <string>

#include "muse/autodiff.hpp"
#include "muse/error.hpp"

namespace muse {

struct AdamW {
  double lr = 1e-4;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  std::map<std::string, ad::Mat> m, v;
  long step = 0;

  // Call once per optimizer step, before the per-tensor updates.
  void begin_step() { ++step; }

  void update(const std::string& name, ad::Mat& param, const ad::Mat& grad) {
    auto& m_t = m[name];
    auto& v_t = v[name];
    if (m_t.size() == 0) {
      m_t = ad::Mat::Zero(param.rows(), param.cols());
      v_t = ad::Mat::Zero(param.rows(), param.cols());
    }
    m_t = beta1 * m_t + (1.0 - beta1) * grad;
    v_t = beta2 * v_t + (1.0 - beta2) * grad.cwiseProduct(grad);
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    ad::Mat update = (m_t / bc1).cwiseQuotient(((v_t / bc2).cwiseSqrt().array() + eps).matrix());
    param -= lr * (update + weight_decay * param);
    if (!param.allFinite())
      throw DataError("parameter '" + name + "' became non-finite after optimizer step " +
                      std::to_string(step));
  }
};

}  // namespace muse
