#pragma once

#include <utility>
#include <vector>

#include "cladec/nn.hpp"

namespace cladec::optim {

/// Piecewise-constant learning rate: base_lr multiplied by every factor whose
/// epoch has been reached.
struct StepSchedule {
  double base_lr = 0.1;
  std::vector<std::pair<int, double>> decays;

  double lr_at(int epoch) const;
};

class Optimizer {
 public:
  explicit Optimizer(std::vector<nn::Parameter*> params) : params_(std::move(params)) {}
  virtual ~Optimizer() = default;

  virtual void step() = 0;
  void zero_grad() { nn::zero_grads(params_); }
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  const std::vector<nn::Parameter*>& params() const { return params_; }

 protected:
  std::vector<nn::Parameter*> params_;
  double lr_ = 0.0;
};

class Sgd : public Optimizer {
 public:
  Sgd(std::vector<nn::Parameter*> params, double lr, double momentum, double weight_decay);
  void step() override;

 private:
  double momentum_, weight_decay_;
  std::vector<std::vector<float>> velocity_;
};

class Adam : public Optimizer {
 public:
  Adam(std::vector<nn::Parameter*> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);
  void step() override;

 private:
  double beta1_, beta2_, eps_;
  long step_count_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

}  // namespace cladec::optim
