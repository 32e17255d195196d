#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

#include "bglab/gradcheck.hpp"
#include "bglab/tensor.hpp"

namespace bglab {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Reduce-on-plateau settings. A validation loss counts as an improvement
/// when it falls below best * (1 - threshold).
struct PlateauOptions {
  std::size_t patience = 40;
  double threshold = 1e-2;
  double factor = 0.5;
  double min_lr = 0.0;
};

struct PlateauState {
  double best = std::numeric_limits<double>::infinity();
  std::size_t bad_epochs = 0;
  std::size_t reductions = 0;
};

struct OptimizerState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::size_t step = 0;
  double lr = 1e-3;
  PlateauState plateau;
};

class Adam {
 public:
  Adam(std::vector<NamedTensor> params, AdamOptions opts = {})
      : params_(std::move(params)), opts_(opts) {
    if (!(opts_.lr > 0)) throw std::invalid_argument("adam: learning rate must be positive");
    state_.lr = opts_.lr;
    for (const auto& p : params_) {
      state_.first_moment.emplace_back(p.tensor.numel(), 0.0);
      state_.second_moment.emplace_back(p.tensor.numel(), 0.0);
    }
  }

  void step() {
    for (const auto& p : params_) {
      if (!p.tensor.has_grad()) {
        throw std::logic_error("adam: parameter '" + p.name + "' has no gradient");
      }
    }
    ++state_.step;
    const double t = static_cast<double>(state_.step);
    const double bias1 = 1.0 - std::pow(opts_.beta1, t);
    const double bias2 = 1.0 - std::pow(opts_.beta2, t);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Tensor param = params_[k].tensor;
      const auto g = param.grad();
      auto w = param.mutable_data();
      auto& m = state_.first_moment[k];
      auto& v = state_.second_moment[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = opts_.beta1 * m[i] + (1 - opts_.beta1) * g[i];
        v[i] = opts_.beta2 * v[i] + (1 - opts_.beta2) * g[i] * g[i];
        const double mhat = m[i] / bias1;
        const double vhat = v[i] / bias2;
        w[i] -= state_.lr * mhat / (std::sqrt(vhat) + opts_.eps);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  double lr() const { return state_.lr; }
  void set_lr(double lr) {
    if (!(lr > 0)) throw std::invalid_argument("adam: learning rate must be positive");
    state_.lr = lr;
  }

  const OptimizerState& state() const { return state_; }
  OptimizerState& state() { return state_; }
  const std::vector<NamedTensor>& params() const { return params_; }

 private:
  std::vector<NamedTensor> params_;
  AdamOptions opts_;
  OptimizerState state_;
};

/// Lowers the learning rate once validation loss has failed to improve for
/// `patience` consecutive epochs, then restarts the count.
class PlateauScheduler {
 public:
  explicit PlateauScheduler(PlateauOptions opts = {}) : opts_(opts) {
    if (opts_.patience == 0) throw std::invalid_argument("plateau: patience must be positive");
    if (!(opts_.factor > 0 && opts_.factor < 1))
      throw std::invalid_argument("plateau: factor must be in (0, 1)");
  }

  /// Returns true when this observation reduced the learning rate.
  bool observe(double val_loss, Adam& optimizer) {
    auto& st = optimizer.state().plateau;
    if (val_loss < st.best * (1.0 - opts_.threshold) || st.best == std::numeric_limits<double>::infinity()) {
      st.best = val_loss;
      st.bad_epochs = 0;
      return false;
    }
    if (++st.bad_epochs < opts_.patience) return false;
    st.bad_epochs = 0;
    const double next = std::max(optimizer.lr() * opts_.factor, opts_.min_lr);
    if (next >= optimizer.lr() || !(next > 0)) return false;
    optimizer.set_lr(next);
    ++st.reductions;
    return true;
  }

  const PlateauOptions& options() const { return opts_; }

 private:
  PlateauOptions opts_;
};

}  // namespace bglab
