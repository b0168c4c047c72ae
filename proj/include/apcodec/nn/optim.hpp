#pragma once

// AdamW with decoupled weight decay.

#include <string>
#include <vector>

#include "apcodec/nn/checkpoint.hpp"
#include "apcodec/nn/layers.hpp"

namespace apcodec::nn {

struct AdamWOptions {
  Real learning_rate = 2e-4;
  Real beta1 = 0.8;
  Real beta2 = 0.99;
  Real eps = 1e-8;
  Real weight_decay = 0.01;
};

class AdamW {
 public:
  AdamW(const ParameterStore& store, AdamWOptions options);

  /// Updates every parameter holding a gradient; the others keep their
  /// value and moments untouched, as if absent from this step.
  void step();

  Real learning_rate() const { return options_.learning_rate; }
  void set_learning_rate(Real lr) { options_.learning_rate = lr; }
  const AdamWOptions& options() const { return options_; }

  /// Moments and per-parameter step counts as "<prefix>{m,v,t}.<name>".
  void export_state(const std::string& prefix, Checkpoint& ckpt) const;
  void import_state(const std::string& prefix, const Checkpoint& ckpt);

 private:
  struct Slot {
    std::string name;
    Var param;
    Matrix m, v;
    long steps = 0;
  };
  AdamWOptions options_;
  std::vector<Slot> slots_;
};

}  // namespace apcodec::nn
