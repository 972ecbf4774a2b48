#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "attackgan/checkpoint.hpp"
#include "attackgan/common.hpp"

namespace attackgan {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over any parameter struct exposing `named_tensors()`. Moment estimates
/// live here so they can be checkpointed alongside the parameters.
template <typename Scalar>
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamOptions options) : options_(options) {}

  const AdamOptions& options() const noexcept { return options_; }
  void set_learning_rate(double lr) { options_.lr = lr; }
  std::size_t steps() const noexcept { return step_; }

  template <typename Params>
  void step(Params& params, const Params& grads) {
    auto p = params.named_tensors();
    const auto g = grads.named_tensors();
    if (p.size() != g.size()) throw Error("optimizer", "parameter/gradient tensor counts differ");
    if (m_.empty()) {
      for (const auto& [name, t] : p) {
        m_.push_back(Mat<Scalar>::Zero(t->rows(), t->cols()));
        v_.push_back(Mat<Scalar>::Zero(t->rows(), t->cols()));
      }
    }
    if (m_.size() != p.size()) throw Error("optimizer", "optimizer state does not match parameters");
    ++step_;
    const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(step_));
    const auto b1 = static_cast<Scalar>(options_.beta1);
    const auto b2 = static_cast<Scalar>(options_.beta2);
    const auto step_size = static_cast<Scalar>(options_.lr / bc1);
    const auto inv_sqrt_bc2 = static_cast<Scalar>(1.0 / std::sqrt(bc2));
    const auto eps = static_cast<Scalar>(options_.eps);
    for (std::size_t k = 0; k < p.size(); ++k) {
      Mat<Scalar>& param = *p[k].second;
      const Mat<Scalar>& grad = *g[k].second;
      if (grad.rows() != param.rows() || grad.cols() != param.cols()) {
        throw Error("optimizer", "gradient shape mismatch for " + p[k].first);
      }
      m_[k] = b1 * m_[k] + (Scalar(1) - b1) * grad;
      v_[k] = b2 * v_[k] + (Scalar(1) - b2) * grad.cwiseProduct(grad);
      param.array() -= step_size * m_[k].array() / ((v_[k].array().sqrt() * inv_sqrt_bc2) + eps);
    }
  }

  template <typename Params>
  void save(Checkpoint& ckpt, const std::string& prefix, const Params& params) const {
    ckpt.add_scalar(prefix + "/step", static_cast<double>(step_));
    if (m_.empty()) return;
    const auto names = params.named_tensors();
    for (std::size_t k = 0; k < names.size(); ++k) {
      ckpt.add_matrix(prefix + "/m/" + names[k].first, m_[k]);
      ckpt.add_matrix(prefix + "/v/" + names[k].first, v_[k]);
    }
  }

  template <typename Params>
  void load(const Checkpoint& ckpt, const std::string& prefix, const Params& params) {
    step_ = static_cast<std::size_t>(ckpt.get_scalar(prefix + "/step"));
    m_.clear();
    v_.clear();
    if (step_ == 0) return;
    for (const auto& [name, t] : params.named_tensors()) {
      m_.push_back(ckpt.get_matrix<Scalar>(prefix + "/m/" + name, t->rows(), t->cols()));
      v_.push_back(ckpt.get_matrix<Scalar>(prefix + "/v/" + name, t->rows(), t->cols()));
    }
  }

 private:
  AdamOptions options_;
  std::vector<Mat<Scalar>> m_;
  std::vector<Mat<Scalar>> v_;
  std::size_t step_ = 0;
};

/// Sets every tensor of a parameter struct to zero, keeping shapes.
template <typename Params>
Params zeros_like(const Params& params) {
  Params out = params;
  for (auto& [name, t] : out.named_tensors()) t->setZero();
  return out;
}

}  // namespace attackgan
