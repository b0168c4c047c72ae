#include "apcodec/nn/layers.hpp"

#include "apcodec/error.hpp"

namespace apcodec::nn {

Var ParameterStore::add(const std::string& name, Matrix init) {
  if (contains(name)) throw ConfigError("duplicate parameter name: " + name);
  Var v = parameter(std::move(init));
  index_.emplace(name, entries_.size());
  entries_.push_back({name, v});
  return v;
}

Var ParameterStore::add_normal(const std::string& name, Index rows, Index cols) {
  constexpr Real sigma = 0.02;
  std::normal_distribution<Real> dist(0.0, sigma);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) {
    Real v;
    do v = dist(rng_);
    while (std::abs(v) > 2 * sigma);
    m(i) = v;
  }
  return add(name, std::move(m));
}

Var ParameterStore::add_constant(const std::string& name, Index rows, Index cols, Real value) {
  return add(name, Matrix::Constant(rows, cols, value));
}

const Var& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return entries_[it->second].var;
}

std::vector<Var> ParameterStore::vars() const {
  std::vector<Var> out;
  out.reserve(entries_.size());
  for (const Entry& e : entries_) out.push_back(e.var);
  return out;
}

Index ParameterStore::scalar_count() const {
  Index n = 0;
  for (const Entry& e : entries_) n += e.var.value().size();
  return n;
}

void ParameterStore::zero_grad() {
  for (Entry& e : entries_) e.var.zero_grad();
}

void ParameterStore::set_requires_grad(bool on) {
  for (Entry& e : entries_) e.var.set_requires_grad(on);
}

Conv1dGeometry conv_geometry(const ConvSpec& spec, Index frames) {
  const Index k = spec.kernel_size;
  const Index s = spec.stride;
  const Index d = spec.dilation;
  if (k < 1 || s < 1 || d < 1) throw ConfigError("convolution kernel, stride and dilation must be >= 1");
  Conv1dGeometry g{k, s, d, 0, frames};
  if (s == 1) {
    g.offset = spec.causal ? -d * (k - 1) : -d * ((k - 1) / 2);
    return g;
  }
  if (frames % s != 0)
    throw FramingError("frame count " + std::to_string(frames) + " is not a multiple of the stride " +
                       std::to_string(s));
  g.out_frames = frames / s;
  if (spec.causal) {
    if (d != 1 || k > 2 * s - 1)
      throw ConfigError("causal downsampling needs dilation 1 and kernel <= 2 * stride - 1");
    g.offset = s - k;
  } else {
    g.offset = -d * ((k - 1) / 2);
  }
  return g;
}

Conv1d::Conv1d(ParameterStore& store, const std::string& name, const ConvSpec& spec) : spec_(spec) {
  conv_geometry(spec, spec.stride);  // validates
  weight_ = store.add_normal(name + ".weight", spec.out_channels, spec.kernel_size * spec.in_channels);
  bias_ = store.add_constant(name + ".bias", spec.out_channels, 1, 0.0);
}

Var Conv1d::operator()(const Var& x) const {
  if (x.rows() != spec_.in_channels)
    throw ValidationError("conv1d: expected " + std::to_string(spec_.in_channels) + " channels, got " +
                          std::to_string(x.rows()));
  return conv1d(x, weight_, bias_, conv_geometry(spec_, x.cols()));
}

DepthwiseConv1d::DepthwiseConv1d(ParameterStore& store, const std::string& name, Index channels,
                                 Index kernel, bool causal)
    : kernel_(kernel), causal_(causal) {
  weight_ = store.add_normal(name + ".weight", channels, kernel);
  bias_ = store.add_constant(name + ".bias", channels, 1, 0.0);
}

Var DepthwiseConv1d::operator()(const Var& x) const {
  const Index offset = causal_ ? -(kernel_ - 1) : -((kernel_ - 1) / 2);
  return depthwise_conv1d(x, weight_, bias_, kernel_, 1, offset);
}

ConvTranspose1d::ConvTranspose1d(ParameterStore& store, const std::string& name, const ConvSpec& spec)
    : spec_(spec) {
  if (spec.kernel_size < spec.stride || (!spec.causal && (spec.kernel_size - spec.stride) % 2 != 0))
    throw ConfigError("transposed convolution needs kernel >= stride (and an even difference when centred)");
  weight_ = store.add_normal(name + ".weight", spec.kernel_size * spec.out_channels, spec.in_channels);
  bias_ = store.add_constant(name + ".bias", spec.out_channels, 1, 0.0);
}

Var ConvTranspose1d::operator()(const Var& x) const {
  if (x.rows() != spec_.in_channels)
    throw ValidationError("conv_transpose1d: expected " + std::to_string(spec_.in_channels) +
                          " channels, got " + std::to_string(x.rows()));
  const Index trim = spec_.causal ? 0 : (spec_.kernel_size - spec_.stride) / 2;
  return conv_transpose1d(x, weight_, bias_, spec_.kernel_size, spec_.stride, trim,
                          x.cols() * spec_.stride);
}

FeedForward::FeedForward(ParameterStore& store, const std::string& name, Index in, Index out) {
  weight_ = store.add_normal(name + ".weight", out, in);
  bias_ = store.add_constant(name + ".bias", out, 1, 0.0);
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, Index channels) {
  gamma_ = store.add_constant(name + ".gamma", channels, 1, 1.0);
  beta_ = store.add_constant(name + ".beta", channels, 1, 0.0);
}

Grn::Grn(ParameterStore& store, const std::string& name, Index channels, GrnMode mode) : mode_(mode) {
  gamma_ = store.add_constant(name + ".gamma", channels, 1, 0.0);
  beta_ = store.add_constant(name + ".beta", channels, 1, 0.0);
}

ConvNeXtBlock::ConvNeXtBlock(ParameterStore& store, const std::string& name, Index channels,
                             Index hidden, Index kernel, bool causal)
    : name_(name), causal_(causal) {
  if (causal)
    mix_ = FeedForward(store, name + ".mix", channels, channels);
  else
    dw_ = DepthwiseConv1d(store, name + ".dwconv", channels, kernel, false);
  norm_ = LayerNorm(store, name + ".norm", channels);
  up_ = FeedForward(store, name + ".ff1", channels, hidden);
  grn_ = Grn(store, name + ".grn", hidden, causal ? GrnMode::per_frame : GrnMode::global);
  down_ = FeedForward(store, name + ".ff2", hidden, channels);
}

Var ConvNeXtBlock::operator()(const Var& x, TapList* taps) const {
  Var h = causal_ ? mix_(x) : dw_(x);
  if (taps) taps->add(name_ + ".mix", h);
  h = up_(norm_(h));
  if (taps) taps->add(name_ + ".ff1", h);
  h = down_(grn_(gelu(h)));
  if (taps) taps->add(name_ + ".ff2", h);
  Var y = h + x;
  if (taps) taps->add(name_, y);
  return y;
}

Conv2d::Conv2d(ParameterStore& store, const std::string& name, Index in, Index out,
               const Conv2dGeometry& g)
    : geometry_(g) {
  weight_ = store.add_normal(name + ".weight", out, g.kernel_h * g.kernel_w * in);
  bias_ = store.add_constant(name + ".bias", out, 1, 0.0);
}

Var Conv2d::operator()(const Var& x, Index& height, Index& width) const {
  Var y = conv2d(x, height, width, weight_, bias_, geometry_);
  height = geometry_.out_height(height);
  width = geometry_.out_width(width);
  return y;
}

}  // namespace apcodec::nn
