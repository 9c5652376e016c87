#include "winnow/optim.hpp"

#include <cmath>
#include <string>

#include "winnow/errors.hpp"

namespace winnow {

float lr_at(const LrSchedule& schedule, int epoch) {
  if (schedule.base_lr <= 0.0f) {
    throw ConfigError("lr schedule: base_lr must be positive");
  }
  if (!(schedule.decay_factor > 0.0f && schedule.decay_factor < 1.0f)) {
    throw ConfigError("lr schedule: decay_factor must lie in (0,1)");
  }
  if (schedule.step_every < 1) {
    throw ConfigError("lr schedule: step_every must be >= 1");
  }
  if (epoch < 0) throw ConfigError("lr schedule: epoch must be >= 0");
  const int k = epoch / schedule.step_every;
  return schedule.base_lr *
         static_cast<float>(std::pow(static_cast<double>(schedule.decay_factor),
                                     static_cast<double>(k)));
}

Optimizer::Optimizer(std::vector<Tensor> params) : params_(std::move(params)) {
  for (auto& p : params_) p.set_requires_grad(true);
}

void Optimizer::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Optimizer::require_grads() const {
  for (const auto& p : params_) {
    if (!p.has_grad()) {
      throw UsageError("optimizer step with no gradient on a parameter of shape " +
                       shape_str(p.shape()));
    }
  }
}

int64_t Optimizer::index_of(const Tensor& param) const {
  for (size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].impl() == param.impl()) {
      return static_cast<int64_t>(i);
    }
  }
  return -1;
}

Sgd::Sgd(std::vector<Tensor> params, float lr, float momentum,
         float weight_decay)
    : Optimizer(std::move(params)),
      momentum_(momentum),
      weight_decay_(weight_decay) {
  lr_ = lr;
  if (momentum_ != 0.0f) {
    velocity_.reserve(params_.size());
    for (const auto& p : params_) {
      velocity_.emplace_back(static_cast<size_t>(p.numel()), 0.0f);
    }
  }
}

void Sgd::step() {
  require_grads();
  for (size_t i = 0; i < params_.size(); ++i) {
    auto w = params_[i].mutable_data();
    auto g = params_[i].grad();
    if (momentum_ == 0.0f) {
      for (size_t j = 0; j < w.size(); ++j) {
        const float grad = g[j] + weight_decay_ * w[j];
        w[j] -= lr_ * grad;
      }
    } else {
      float* vel = velocity_[i].data();
      for (size_t j = 0; j < w.size(); ++j) {
        const float grad = g[j] + weight_decay_ * w[j];
        vel[j] = momentum_ * vel[j] + grad;
        w[j] -= lr_ * vel[j];
      }
    }
  }
  ++step_count_;
}

std::vector<std::span<float>> Sgd::state_for(const Tensor& param) {
  const int64_t i = index_of(param);
  if (i < 0 || velocity_.empty()) return {};
  return {std::span<float>(velocity_[static_cast<size_t>(i)])};
}

Adam::Adam(std::vector<Tensor> params, float lr, float beta1, float beta2,
           float eps, float weight_decay)
    : Optimizer(std::move(params)),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps),
      weight_decay_(weight_decay) {
  lr_ = lr;
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(static_cast<size_t>(p.numel()), 0.0f);
    v_.emplace_back(static_cast<size_t>(p.numel()), 0.0f);
  }
}

void Adam::step() {
  require_grads();
  ++step_count_;
  const double t = static_cast<double>(step_count_);
  const float bc1 = 1.0f - static_cast<float>(std::pow(beta1_, t));
  const float bc2 = 1.0f - static_cast<float>(std::pow(beta2_, t));
  for (size_t i = 0; i < params_.size(); ++i) {
    auto w = params_[i].mutable_data();
    auto g = params_[i].grad();
    float* m = m_[i].data();
    float* v = v_[i].data();
    for (size_t j = 0; j < w.size(); ++j) {
      const float grad = g[j] + weight_decay_ * w[j];
      m[j] = beta1_ * m[j] + (1.0f - beta1_) * grad;
      v[j] = beta2_ * v[j] + (1.0f - beta2_) * grad * grad;
      const float mhat = m[j] / bc1;
      const float vhat = v[j] / bc2;
      w[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

std::vector<std::span<float>> Adam::state_for(const Tensor& param) {
  const int64_t i = index_of(param);
  if (i < 0) return {};
  return {std::span<float>(m_[static_cast<size_t>(i)]),
          std::span<float>(v_[static_cast<size_t>(i)])};
}

}  // namespace winnow
