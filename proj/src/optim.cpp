// SPDX-License-Identifier: Apache-2.0
#include "s3f/optim.hpp"

#include <cmath>

namespace s3f {

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::Adam;
  if (s == "sgd") return OptimizerKind::Sgd;
  throw Error("config", "unknown optimizer '" + s + "' (expected adam or sgd)");
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "sgd"; }

OptimizerSpec OptimizerSpec::defaults(OptimizerKind kind) {
  OptimizerSpec s;
  s.kind = kind;
  if (kind == OptimizerKind::Sgd) {
    s.lr = 0.05;
    s.decay_factor = 0.1;
    s.decay_every = 100;
  }
  return s;
}

double OptimizerSpec::lr_at(std::size_t step, std::size_t epoch) const {
  double lr_now = lr;
  if (decay_every) lr_now *= std::pow(decay_factor, static_cast<double>(epoch / decay_every));
  if (step < warmup_steps) lr_now *= static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  return lr_now;
}

template <typename T>
void Optimizer<T>::step(const ParamList<T>& params, double lr) {
  ++t_;
  const T lr_t = static_cast<T>(lr);
  const T wd = static_cast<T>(spec_.weight_decay);
  const T b1 = static_cast<T>(spec_.beta1), b2 = static_cast<T>(spec_.beta2), eps = static_cast<T>(spec_.eps);
  const T mom = static_cast<T>(spec_.momentum);
  const T c1 = T(1) - static_cast<T>(std::pow(spec_.beta1, static_cast<double>(t_)));
  const T c2 = T(1) - static_cast<T>(std::pow(spec_.beta2, static_cast<double>(t_)));
  T gscale = 1;
  if (spec_.clip_norm > 0) {
    double sq = 0;
    for (const auto& [name, p] : params)
      if (p.requires_grad() && p.has_grad())
        for (T x : p.grad()) sq += static_cast<double>(x) * static_cast<double>(x);
    const double norm = std::sqrt(sq);
    if (norm > spec_.clip_norm) gscale = static_cast<T>(spec_.clip_norm / norm);
  }
  for (const auto& [name, p] : params) {
    if (!p.requires_grad() || !p.has_grad()) continue;
    Tensor<T> param = p;
    auto w = param.mutable_data();
    const auto g = p.grad();
    auto& m = m_[name];
    if (m.size() != w.size()) m.assign(w.size(), T(0));
    if (spec_.kind == OptimizerKind::Adam) {
      auto& v = v_[name];
      if (v.size() != w.size()) v.assign(w.size(), T(0));
      for (std::size_t i = 0; i < w.size(); ++i) {
        const T gi = gscale * g[i] + wd * w[i];
        m[i] = b1 * m[i] + (T(1) - b1) * gi;
        v[i] = b2 * v[i] + (T(1) - b2) * gi * gi;
        w[i] -= lr_t * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
      }
    } else {
      for (std::size_t i = 0; i < w.size(); ++i) {
        const T gi = gscale * g[i] + wd * w[i];
        m[i] = mom * m[i] + gi;
        w[i] -= lr_t * m[i];
      }
    }
  }
}

template <typename T>
void Optimizer<T>::save(NamedTensorArchive& archive, const std::string& prefix) const {
  for (const auto& [name, m] : m_) archive.put(prefix + "m." + name, Tensor<T>({m.size()}, m));
  for (const auto& [name, v] : v_) archive.put(prefix + "v." + name, Tensor<T>({v.size()}, v));
  archive.metadata()[prefix + "steps"] = std::to_string(t_);
}

template <typename T>
void Optimizer<T>::load(const NamedTensorArchive& archive, const std::string& prefix) {
  m_.clear();
  v_.clear();
  const auto it = archive.metadata().find(prefix + "steps");
  check(it != archive.metadata().end(), "optimizer", "archive has no optimizer state");
  t_ = std::stoull(it->second);
  for (const auto& name : archive.names()) {
    if (name.rfind(prefix + "m.", 0) == 0) {
      const auto t = archive.get<T>(name);
      m_[name.substr(prefix.size() + 2)].assign(t.data().begin(), t.data().end());
    } else if (name.rfind(prefix + "v.", 0) == 0) {
      const auto t = archive.get<T>(name);
      v_[name.substr(prefix.size() + 2)].assign(t.data().begin(), t.data().end());
    }
  }
}

template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace s3f
