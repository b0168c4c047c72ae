#include "apcodec/nn/optim.hpp"

#include <cmath>

#include "apcodec/error.hpp"

namespace apcodec::nn {

AdamW::AdamW(const ParameterStore& store, AdamWOptions options) : options_(options) {
  if (!(options.learning_rate >= 0) || !(options.beta1 >= 0 && options.beta1 < 1) ||
      !(options.beta2 >= 0 && options.beta2 < 1) || !(options.eps > 0) || !(options.weight_decay >= 0))
    throw ConfigError("invalid AdamW hyperparameters");
  for (const auto& e : store.entries())
    slots_.push_back({e.name, e.var, Matrix::Zero(e.var.rows(), e.var.cols()),
                      Matrix::Zero(e.var.rows(), e.var.cols()), 0});
}

void AdamW::step() {
  const Real lr = options_.learning_rate, b1 = options_.beta1, b2 = options_.beta2;
  for (Slot& s : slots_) {
    if (!s.param.has_grad()) continue;
    const Matrix& g = s.param.grad();
    ++s.steps;
    s.m = b1 * s.m + (1 - b1) * g;
    s.v = b2 * s.v + (1 - b2) * g.cwiseProduct(g);
    const Real c1 = 1 - std::pow(b1, Real(s.steps));
    const Real c2 = 1 - std::pow(b2, Real(s.steps));
    Matrix& p = s.param.mutable_value();
    p *= 1 - lr * options_.weight_decay;
    p.array() -= lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + options_.eps);
  }
}

void AdamW::export_state(const std::string& prefix, Checkpoint& ckpt) const {
  for (const Slot& s : slots_) {
    ckpt.tensors.push_back({prefix + "m." + s.name, s.m});
    ckpt.tensors.push_back({prefix + "v." + s.name, s.v});
    ckpt.tensors.push_back({prefix + "t." + s.name, Matrix::Constant(1, 1, Real(s.steps))});
  }
}

void AdamW::import_state(const std::string& prefix, const Checkpoint& ckpt) {
  for (Slot& s : slots_) {
    const NamedTensor* m = ckpt.find(prefix + "m." + s.name);
    const NamedTensor* v = ckpt.find(prefix + "v." + s.name);
    const NamedTensor* t = ckpt.find(prefix + "t." + s.name);
    if (!m || !v || !t) throw CheckpointError("optimizer state for " + s.name + " is missing");
    if (m->value.rows() != s.m.rows() || m->value.cols() != s.m.cols() || v->value.rows() != s.v.rows() ||
        v->value.cols() != s.v.cols())
      throw CheckpointError("optimizer state for " + s.name + " has the wrong shape");
    s.m = m->value;
    s.v = v->value;
    s.steps = long(t->value(0, 0));
  }
}

}  // namespace apcodec::nn
