#pragma once

#include <memory>
#include <span>
#include <vector>

#include "winnow/tensor.hpp"

namespace winnow {

// Step-decay learning-rate schedule: base_lr * decay_factor^floor(epoch/step_every).
struct LrSchedule {
  float base_lr = 0.1f;
  float decay_factor = 0.1f;
  int step_every = 30;
};

float lr_at(const LrSchedule& schedule, int epoch);

class Optimizer {
 public:
  explicit Optimizer(std::vector<Tensor> params);
  virtual ~Optimizer() = default;

  // Applies one update from the current gradients. Throws UsageError if any
  // parameter has no gradient buffer.
  virtual void step() = 0;

  void zero_grad();
  void set_lr(float lr) { lr_ = lr; }
  float lr() const { return lr_; }
  int64_t step_count() const { return step_count_; }
  const std::vector<Tensor>& params() const { return params_; }

  // Moment buffers attached to `param` (empty when the optimizer keeps none).
  // Used by pruning to keep frozen filters from drifting via stale momentum.
  virtual std::vector<std::span<float>> state_for(const Tensor& param) = 0;

 protected:
  void require_grads() const;
  int64_t index_of(const Tensor& param) const;  // -1 when unknown

  std::vector<Tensor> params_;
  float lr_ = 0.0f;
  int64_t step_count_ = 0;
};

class Sgd : public Optimizer {
 public:
  Sgd(std::vector<Tensor> params, float lr, float momentum = 0.0f,
      float weight_decay = 0.0f);

  void step() override;
  std::vector<std::span<float>> state_for(const Tensor& param) override;

 private:
  float momentum_;
  float weight_decay_;
  std::vector<std::vector<float>> velocity_;  // empty when momentum == 0
};

class Adam : public Optimizer {
 public:
  Adam(std::vector<Tensor> params, float lr, float beta1 = 0.9f,
       float beta2 = 0.999f, float eps = 1e-8f, float weight_decay = 0.0f);

  void step() override;
  std::vector<std::span<float>> state_for(const Tensor& param) override;

 private:
  float beta1_, beta2_, eps_, weight_decay_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
};

}  // namespace winnow
