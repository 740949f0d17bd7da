// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "s3f/archive.hpp"
#include "s3f/nn.hpp"

namespace s3f {

enum class OptimizerKind { Adam, Sgd };

OptimizerKind parse_optimizer(const std::string& s);
std::string to_string(OptimizerKind k);

struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 0.01;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;  // Adam
  double momentum = 0.9;                         // SGD
  double weight_decay = 0.0;
  std::size_t warmup_steps = 0;  // linear ramp from lr / warmup_steps
  double decay_factor = 0.5;
  std::size_t decay_every = 20;  // epochs; 0 disables decay
  double clip_norm = 0.0;        // global gradient norm cap; 0 disables

  // Adam 0.01 halved every 20 epochs, or SGD 0.05 divided by 10 every 100.
  static OptimizerSpec defaults(OptimizerKind kind);
  double lr_at(std::size_t step, std::size_t epoch) const;
};

// Per-parameter state keyed by name so it survives a checkpoint round trip.
template <typename T>
class Optimizer {
 public:
  explicit Optimizer(OptimizerSpec spec) : spec_(spec) {}

  const OptimizerSpec& spec() const { return spec_; }
  std::size_t steps() const { return t_; }

  // Applies one update to every parameter that requires grad and has one.
  void step(const ParamList<T>& params, double lr);

  void save(NamedTensorArchive& archive, const std::string& prefix = "optim.") const;
  void load(const NamedTensorArchive& archive, const std::string& prefix = "optim.");

 private:
  OptimizerSpec spec_;
  std::size_t t_ = 0;
  std::map<std::string, std::vector<T>> m_, v_;
};

}  // namespace s3f
