#pragma once

// Parameterised layers built on the autograd ops. Every layer registers its
// tensors in a ParameterStore under a dotted name ("encoder.amp.block0.ff1.weight").

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "apcodec/nn/autograd.hpp"
#include "apcodec/nn/conv.hpp"
#include "apcodec/nn/ops.hpp"

namespace apcodec::nn {

class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Var var;
  };

  explicit ParameterStore(std::uint64_t seed = 0) : rng_(seed) {}

  /// Registers a parameter; names must be unique.
  Var add(const std::string& name, Matrix init);
  /// Truncated normal (sigma 0.02, cut at two sigma).
  Var add_normal(const std::string& name, Index rows, Index cols);
  Var add_constant(const std::string& name, Index rows, Index cols, Real value);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Var& get(const std::string& name) const;
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Var> vars() const;

  /// Total number of scalar parameters.
  Index scalar_count() const;
  void zero_grad();
  void set_requires_grad(bool on);

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  std::mt19937_64 rng_;
};

struct ConvSpec {
  Index in_channels = 1;
  Index out_channels = 1;
  Index kernel_size = 1;
  Index stride = 1;
  Index dilation = 1;
  bool causal = false;
};

/// Geometry that realises `spec` on `frames` input frames.
///
/// Stride 1: "same" padding, or left-only padding when causal. Stride s > 1
/// produces frames / s outputs; the causal form places the last tap of output
/// j on input frame (j + 1) * s - 1, which requires kernel <= 2 * s - 1.
Conv1dGeometry conv_geometry(const ConvSpec& spec, Index frames);

class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(ParameterStore& store, const std::string& name, const ConvSpec& spec);
  Var operator()(const Var& x) const;
  const ConvSpec& spec() const { return spec_; }

 private:
  ConvSpec spec_;
  Var weight_, bias_;
};

/// Stride-1 convolution with one filter per channel.
class DepthwiseConv1d {
 public:
  DepthwiseConv1d() = default;
  DepthwiseConv1d(ParameterStore& store, const std::string& name, Index channels, Index kernel,
                  bool causal);
  Var operator()(const Var& x) const;

 private:
  Index kernel_ = 1;
  bool causal_ = false;
  Var weight_, bias_;
};

/// Upsampling by `stride`. Output has exactly frames * stride columns: the
/// causal form drops the trailing kernel - stride frames of the full output
/// so output j only depends on inputs <= j / stride; the non-causal form
/// trims (kernel - stride) / 2 from each end.
class ConvTranspose1d {
 public:
  ConvTranspose1d() = default;
  ConvTranspose1d(ParameterStore& store, const std::string& name, const ConvSpec& spec);
  Var operator()(const Var& x) const;

 private:
  ConvSpec spec_;
  Var weight_, bias_;
};

class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(ParameterStore& store, const std::string& name, Index in, Index out);
  Var operator()(const Var& x) const { return linear(x, weight_, bias_); }
  const Var& weight() const { return weight_; }
  const Var& bias() const { return bias_; }

 private:
  Var weight_, bias_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, Index channels);
  Var operator()(const Var& x) const { return layer_norm(x, gamma_, beta_); }

 private:
  Var gamma_, beta_;
};

class Grn {
 public:
  Grn() = default;
  Grn(ParameterStore& store, const std::string& name, Index channels, GrnMode mode);
  Var operator()(const Var& x) const { return grn(x, gamma_, beta_, mode_); }

 private:
  GrnMode mode_ = GrnMode::global;
  Var gamma_, beta_;
};

/// Collects named intermediate outputs in forward order.
struct TapList {
  std::vector<std::pair<std::string, Var>> taps;
  void add(std::string name, const Var& v) { taps.emplace_back(std::move(name), v); }
};

/// depthwise conv -> layer norm -> FF(hidden) -> GELU -> GRN -> FF(channels) -> + input.
/// In causal mode the depthwise conv becomes a channels -> channels feed-forward
/// layer and GRN pools per frame.
class ConvNeXtBlock {
 public:
  ConvNeXtBlock() = default;
  ConvNeXtBlock(ParameterStore& store, const std::string& name, Index channels, Index hidden,
                Index kernel, bool causal);
  Var operator()(const Var& x, TapList* taps = nullptr) const;

 private:
  std::string name_;
  bool causal_ = false;
  DepthwiseConv1d dw_;
  FeedForward mix_;
  LayerNorm norm_;
  FeedForward up_, down_;
  Grn grn_;
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParameterStore& store, const std::string& name, Index in, Index out, const Conv2dGeometry& g);
  /// Returns the output and updates height/width in place.
  Var operator()(const Var& x, Index& height, Index& width) const;

 private:
  Conv2dGeometry geometry_;
  Var weight_, bias_;
};

}  // namespace apcodec::nn
