#include <cmath>
#include <numbers>
#include <random>

#include "apcodec/error.hpp"
#include "apcodec/nn/checkpoint.hpp"
#include "apcodec/nn/conv.hpp"
#include "apcodec/nn/layers.hpp"
#include "apcodec/nn/ops.hpp"
#include "apcodec/nn/signal.hpp"
#include "doctest.h"
#include "gradcheck.hpp"

using namespace apcodec;
using namespace apcodec::nn;
using gradcheck::random_matrix;

namespace {

void require_gradients(const std::function<Var()>& f, std::vector<Var> leaves,
                       std::vector<std::string> labels = {}) {
  const auto r = gradcheck::check(f, std::move(leaves), std::move(labels));
  INFO("worst tensor: " << r.where << " rel err " << r.worst);
  CHECK(r.worst < gradcheck::kTolerance);
}

}  // namespace

TEST_CASE("elementwise ops match finite differences") {
  std::mt19937_64 rng(1);
  Var a = parameter(random_matrix(3, 4, rng));
  Var b = parameter(random_matrix(3, 4, rng));
  Var pos = parameter(random_matrix(3, 4, rng).cwiseAbs().array() + 0.5);
  Var bias = parameter(random_matrix(3, 1, rng));

  require_gradients([&] { return a + b; }, {a, b});
  require_gradients([&] { return a - b; }, {a, b});
  require_gradients([&] { return a * b; }, {a, b});
  require_gradients([&] { return a * a; }, {a});
  require_gradients([&] { return -a * 3.0; }, {a});
  require_gradients([&] { return add_scalar(a, 2.0); }, {a});
  require_gradients([&] { return add_bias(a, bias); }, {a, bias});
  require_gradients([&] { return scale_rows(a, bias); }, {a, bias});
  require_gradients([&] { return exp(a, 1e8); }, {a});
  require_gradients([&] { return log(pos); }, {pos});
  require_gradients([&] { return sqrt(pos); }, {pos});
  require_gradients([&] { return square(a); }, {a});
  require_gradients([&] { return abs(a); }, {a});
  require_gradients([&] { return sin(a); }, {a});
  require_gradients([&] { return cos(a); }, {a});
  require_gradients([&] { return relu(a); }, {a});
  require_gradients([&] { return leaky_relu(a, 0.1); }, {a});
  require_gradients([&] { return gelu(a); }, {a});
  require_gradients([&] { return clamp_min(a, 0.1); }, {a});
  require_gradients([&] { return phase(a, b); }, {a, b});
  require_gradients([&] { return anti_wrap(a * 4.0); }, {a});
  require_gradients([&] { return diff_rows(a); }, {a});
  require_gradients([&] { return diff_cols(a); }, {a});
}

TEST_CASE("structural ops and reductions match finite differences") {
  std::mt19937_64 rng(2);
  Var a = parameter(random_matrix(3, 4, rng));
  Var b = parameter(random_matrix(4, 2, rng));
  Var c = parameter(random_matrix(2, 4, rng));

  require_gradients([&] { return matmul(a, b); }, {a, b});
  require_gradients([&] { return transpose(a); }, {a});
  require_gradients([&] {
    std::vector<Var> parts{a, c};
    return concat_rows(parts);
  }, {a, c});
  require_gradients([&] { return slice_rows(a, 1, 2); }, {a});
  require_gradients([&] { return slice_cols(a, 1, 2); }, {a});
  require_gradients([&] {
    std::vector<Var> terms{a, a * 2.0, square(a)};
    return sum_all(terms);
  }, {a});
  require_gradients([&] { return sum(a); }, {a});
  require_gradients([&] { return mean(a); }, {a});
  Var a2 = parameter(random_matrix(3, 4, rng));
  require_gradients([&] { return mse(a, a2); }, {a, a2});
  require_gradients([&] { return mae(a, a2); }, {a, a2});
}

TEST_CASE("normalisation layers match finite differences") {
  std::mt19937_64 rng(3);
  Var x = parameter(random_matrix(5, 6, rng));
  Var gamma = parameter(random_matrix(5, 1, rng));
  Var beta = parameter(random_matrix(5, 1, rng));
  require_gradients([&] { return layer_norm(x, gamma, beta); }, {x, gamma, beta}, {"x", "gamma", "beta"});
  require_gradients([&] { return grn(x, gamma, beta, GrnMode::global); }, {x, gamma, beta},
                    {"x", "gamma", "beta"});
  require_gradients([&] { return grn(x, gamma, beta, GrnMode::per_frame); }, {x, gamma, beta},
                    {"x", "gamma", "beta"});
}

TEST_CASE("convolutions match finite differences") {
  std::mt19937_64 rng(4);
  Var x = parameter(random_matrix(3, 16, rng));
  Var w = parameter(random_matrix(4, 5 * 3, rng));
  Var b = parameter(random_matrix(4, 1, rng));

  require_gradients([&] { return conv1d(x, w, b, {5, 1, 1, -2, 16}); }, {x, w, b}, {"x", "w", "b"});
  require_gradients([&] { return conv1d(x, w, b, {5, 1, 2, -8, 16}); }, {x, w, b}, {"x", "w", "b"});
  require_gradients([&] { return conv1d(x, w, b, {5, 4, 1, -1, 4}); }, {x, w, b}, {"x", "w", "b"});

  Var dw = parameter(random_matrix(3, 7, rng));
  Var db = parameter(random_matrix(3, 1, rng));
  require_gradients([&] { return depthwise_conv1d(x, dw, db, 7, 1, -3); }, {x, dw, db}, {"x", "w", "b"});
  require_gradients([&] { return depthwise_conv1d(x, dw, db, 7, 2, -12); }, {x, dw, db}, {"x", "w", "b"});

  Var xs = parameter(random_matrix(3, 4, rng));
  Var tw = parameter(random_matrix(6 * 2, 3, rng));
  Var tb = parameter(random_matrix(2, 1, rng));
  require_gradients([&] { return conv_transpose1d(xs, tw, tb, 6, 4, 0, 16); }, {xs, tw, tb},
                    {"x", "w", "b"});
  require_gradients([&] { return conv_transpose1d(xs, tw, tb, 6, 4, 1, 16); }, {xs, tw, tb},
                    {"x", "w", "b"});

  Var lw = parameter(random_matrix(2, 3, rng));
  require_gradients([&] { return linear(x, lw, tb); }, {x, lw, tb});

  Var img = parameter(random_matrix(2, 7 * 5, rng));
  Var kw = parameter(random_matrix(3, 3 * 2 * 2, rng));
  Var kb = parameter(random_matrix(3, 1, rng));
  Conv2dGeometry g{3, 2, 2, 1, 1, 0};
  require_gradients([&] { return conv2d(img, 7, 5, kw, kb, g); }, {img, kw, kb}, {"x", "w", "b"});
}

TEST_CASE("differentiable STFT and ISTFT match finite differences") {
  std::mt19937_64 rng(5);
  for (Framing framing : {Framing::centered, Framing::causal}) {
    const StftConfig cfg(16, 4, 32, 16000, framing);
    Var x = parameter(random_matrix(1, 32, rng));
    require_gradients([&] { return stft(x, cfg); }, {x});
    Var spec = parameter(random_matrix(2 * cfg.bins(), 8, rng));
    require_gradients([&] { return istft(spec, cfg); }, {spec});
    require_gradients([&] { return magnitude(real_part(spec), imag_part(spec)); }, {spec});
  }
}

TEST_CASE("differentiable STFT agrees with the plain transform") {
  std::mt19937_64 rng(6);
  const StftConfig cfg(64, 16, 128, 16000);
  Matrix x = random_matrix(1, 256, rng);
  const Var s = stft(constant(x), cfg);
  const auto ref = stft_complex<double>(Eigen::VectorXd(x.transpose()), cfg);
  CHECK((s.value().topRows(cfg.bins()) - ref.real).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((s.value().bottomRows(cfg.bins()) - ref.imag).cwiseAbs().maxCoeff() < 1e-12);
  const Var y = istft(s, cfg);
  CHECK((y.value() - x).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("gelu values") {
  const Matrix pts = (Matrix(1, 3) << 0.0, 1.0, 30.0).finished();
  const Matrix y = gelu(constant(pts)).value();
  CHECK(y(0, 0) == 0.0);
  CHECK(y(0, 1) == doctest::Approx(0.8413447460685429).epsilon(1e-12));
  CHECK(y(0, 2) == doctest::Approx(30.0).epsilon(1e-12));
}

TEST_CASE("layer norm matches a direct mean/variance computation") {
  std::mt19937_64 rng(7);
  const Matrix x = random_matrix(6, 5, rng);
  const Matrix gamma = random_matrix(6, 1, rng);
  const Matrix beta = random_matrix(6, 1, rng);
  const Matrix y = layer_norm(constant(x), constant(gamma), constant(beta)).value();
  for (Index t = 0; t < x.cols(); ++t) {
    double mu = 0, var = 0;
    for (Index c = 0; c < 6; ++c) mu += x(c, t) / 6;
    for (Index c = 0; c < 6; ++c) var += (x(c, t) - mu) * (x(c, t) - mu) / 6;
    for (Index c = 0; c < 6; ++c)
      CHECK(y(c, t) == doctest::Approx(gamma(c) * (x(c, t) - mu) / std::sqrt(var + 1e-6) + beta(c)).epsilon(1e-10));
  }
  const Matrix flat = layer_norm(constant(Matrix::Constant(4, 3, 2.5)), constant(Matrix::Ones(4, 1)),
                                 constant(Matrix::Zero(4, 1)))
                          .value();
  CHECK(flat.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("grn reference values") {
  const Matrix x = (Matrix(2, 2) << 1, 2, 3, 4).finished();
  const Matrix gamma = (Matrix(2, 1) << 0.5, -1).finished();
  const Matrix beta = (Matrix(2, 1) << 0.1, 0.2).finished();
  const Matrix y = grn(constant(x), constant(gamma), constant(beta), GrnMode::global).value();
  CHECK(y(0, 0) == doctest::Approx(1.4090169089647744).epsilon(1e-10));
  CHECK(y(0, 1) == doctest::Approx(2.7180338179295487).epsilon(1e-10));
  CHECK(y(1, 0) == doctest::Approx(-0.945896887852598).epsilon(1e-10));
  CHECK(y(1, 1) == doctest::Approx(-1.327862517136797).epsilon(1e-10));

  const Matrix zero = Matrix::Zero(2, 1);
  CHECK(grn(constant(x), constant(zero), constant(zero), GrnMode::global).value() == x);

  // Channels with equal norms: n(x) = 1 for each, so y = gamma * x + x.
  const Matrix eq = (Matrix(2, 2) << 3, 4, 4, -3).finished();
  const Matrix ones = Matrix::Ones(2, 1);
  const Matrix y2 = grn(constant(eq), constant(ones), constant(zero), GrnMode::global).value();
  CHECK((y2 - 2.0 * eq).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("feed-forward equals a kernel-1 convolution") {
  ParameterStore store(3);
  FeedForward ff(store, "ff", 4, 6);
  std::mt19937_64 rng(8);
  const Var x = constant(random_matrix(4, 9, rng));
  const Matrix a = ff(x).value();
  const Matrix b = conv1d(x, ff.weight(), ff.bias(), {1, 1, 1, 0, 9}).value();
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);

  ParameterStore ident;
  Var w = ident.add("w", Matrix::Identity(4, 4));
  Var bias = ident.add("b", Matrix::Zero(4, 1));
  CHECK(linear(x, w, bias).value() == x.value());
  Var xin = parameter(x.value());
  Var y = linear(xin, w, bias);
  backward(y);
  CHECK(xin.grad() == Matrix::Ones(4, 9));
}

TEST_CASE("identity kernel-1 convolution") {
  std::mt19937_64 rng(9);
  const Var x = constant(random_matrix(3, 10, rng));
  const Var w = constant(Matrix::Identity(3, 3));
  const Var b = constant(Matrix::Zero(3, 1));
  CHECK(conv1d(x, w, b, conv_geometry({3, 3, 1, 1, 1, false}, 10)).value() == x.value());
}

namespace {

// First output frame whose value changes when input frame t is perturbed.
Index first_changed(const std::function<Matrix(const Matrix&)>& f, const Matrix& x, Index t) {
  const Matrix base = f(x);
  Matrix bumped = x;
  bumped.col(t).array() += 1.0;
  const Matrix out = f(bumped);
  for (Index j = 0; j < out.cols(); ++j)
    if ((out.col(j) - base.col(j)).cwiseAbs().maxCoeff() != 0.0) return j;
  return out.cols();
}

}  // namespace

TEST_CASE("causal layers never read future frames") {
  std::mt19937_64 rng(10);
  ParameterStore store(11);
  const Conv1d down(store, "down", {4, 3, 7, 8, 1, true});
  const Conv1d conv(store, "conv", {4, 3, 5, 1, 1, true});
  const ConvTranspose1d up(store, "up", {4, 3, 16, 8, 1, true});
  const ConvNeXtBlock block(store, "blk", 4, 8, 7, true);
  const Matrix x = random_matrix(4, 64, rng);
  const Matrix xs = random_matrix(4, 6, rng);

  for (Index t = 0; t < 64; ++t) {
    const Index bound = (t + 1 + 7) / 8 - 1;  // ceil((t + 1) / 8) - 1
    CHECK(first_changed([&](const Matrix& m) { return down(constant(m)).value(); }, x, t) >= bound);
    CHECK(first_changed([&](const Matrix& m) { return conv(constant(m)).value(); }, x, t) >= t);
    CHECK(first_changed([&](const Matrix& m) { return block(constant(m)).value(); }, x, t) >= t);
  }
  for (Index t = 0; t < 6; ++t)
    CHECK(first_changed([&](const Matrix& m) { return up(constant(m)).value(); }, xs, t) >= t * 8);
}

TEST_CASE("causal downsampling rejects wide kernels") {
  ParameterStore store;
  CHECK_THROWS_AS(Conv1d(store, "bad", {2, 2, 16, 8, 1, true}), ConfigError);
  CHECK_NOTHROW(Conv1d(store, "ok", {2, 2, 15, 8, 1, true}));
}

TEST_CASE("frame arithmetic of resampling layers") {
  ParameterStore store(12);
  const Conv1d down(store, "down", {2, 2, 7, 8, 1, false});
  const ConvTranspose1d up(store, "up", {2, 3, 16, 8, 1, false});
  const ConvTranspose1d cup(store, "cup", {2, 3, 16, 8, 1, true});
  CHECK(down(constant(Matrix::Zero(2, 64))).cols() == 8);
  CHECK(up(constant(Matrix::Zero(2, 4))).cols() == 32);
  CHECK(cup(constant(Matrix::Zero(2, 4))).cols() == 32);
  CHECK_THROWS_AS(down(constant(Matrix::Zero(2, 60))), FramingError);
  CHECK_THROWS_AS(down(constant(Matrix::Zero(3, 64))), ValidationError);

  // All-zero input leaves only the bias.
  ParameterStore s2(13);
  ConvTranspose1d z(s2, "z", {2, 3, 16, 8, 1, true});
  Var bias = s2.get("z.bias");
  bias.mutable_value() << 1, 2, 3;
  const Matrix out = z(constant(Matrix::Zero(2, 4))).value();
  for (Index j = 0; j < out.cols(); ++j) CHECK(out.col(j) == bias.value());
}

TEST_CASE("ConvNeXt block with zeroed output projection is the identity") {
  ParameterStore store(14);
  ConvNeXtBlock block(store, "b", 8, 16, 7, false);
  Var w = store.get("b.ff2.weight");
  w.mutable_value().setZero();
  std::mt19937_64 rng(15);
  const Matrix x = random_matrix(8, 12, rng);
  CHECK(block(constant(x)).value() == x);
}

TEST_CASE("layers match finite differences in both modes") {
  std::mt19937_64 rng(16);
  for (bool causal : {false, true}) {
    ParameterStore store(17);
    ConvNeXtBlock block(store, "b", 4, 8, 7, causal);
    // Non-zero GRN parameters so their gradients are exercised.
    for (auto& e : store.entries())
      if (e.name.find("grn") != std::string::npos) {
        Var v = e.var;
        v.mutable_value() = random_matrix(v.rows(), v.cols(), rng);
      }
    Var x = parameter(random_matrix(4, 10, rng));
    std::vector<Var> leaves{x};
    std::vector<std::string> labels{"x"};
    for (const auto& e : store.entries()) {
      leaves.push_back(e.var);
      labels.push_back(e.name);
    }
    require_gradients([&] { return block(x); }, leaves, labels);
  }
}

TEST_CASE("detached branches receive no gradient") {
  std::mt19937_64 rng(18);
  Var a = parameter(random_matrix(2, 3, rng));
  Var b = parameter(random_matrix(2, 3, rng));
  Var y = sum(detach(a) * b);
  backward(y);
  CHECK_FALSE(a.has_grad());
  CHECK(b.grad() == a.value());

  Var c = parameter(random_matrix(2, 3, rng));
  {
    NoGradGuard guard;
    Var z = square(c);
    CHECK_FALSE(z.requires_grad());
  }
}

TEST_CASE("checkpoint round trip") {
  ParameterStore store(19);
  FeedForward ff(store, "enc.ff", 3, 5);
  LayerNorm ln(store, "enc.ln", 5);
  Checkpoint ckpt;
  ckpt.config = R"({"k":1})";
  export_parameters(store, "g.", ckpt);
  const std::string bytes = serialize_checkpoint(ckpt);
  const Checkpoint back = parse_checkpoint(bytes);
  CHECK(back.config == ckpt.config);
  REQUIRE(back.tensors.size() == ckpt.tensors.size());
  for (std::size_t i = 0; i < back.tensors.size(); ++i) {
    CHECK(back.tensors[i].name == ckpt.tensors[i].name);
    CHECK(back.tensors[i].value == ckpt.tensors[i].value.cast<float>().cast<double>());
  }
  // Second trip is exact: stored values are already single precision.
  CHECK(serialize_checkpoint(back) == bytes);

  ParameterStore other(99);
  FeedForward ff2(other, "enc.ff", 3, 5);
  LayerNorm ln2(other, "enc.ln", 5);
  import_parameters(other, "g.", back);
  CHECK(other.get("enc.ff.weight").value() == back.find("g.enc.ff.weight")->value);

  CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, bytes.size() - 3)), CheckpointError);
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(parse_checkpoint(bad), CheckpointError);
}
