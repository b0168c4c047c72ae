#include "apcodec/nn/ops.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "apcodec/dsp.hpp"
#include "apcodec/error.hpp"

namespace apcodec::nn {

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ValidationError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                          std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                          std::to_string(b.cols()) + ")");
}

bool wants(const Node& s, std::size_t i) { return s.inputs[i]->requires_grad; }

constexpr Real kTwoPi = 2.0 * std::numbers::pi;

}  // namespace

Var operator+(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  return make_op(a.value() + b.value(), {a, b},
                 [](Node& s) {
                   s.inputs[0]->accumulate(s.grad);
                   s.inputs[1]->accumulate(s.grad);
                 },
                 "add");
}

Var operator-(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  return make_op(a.value() - b.value(), {a, b},
                 [](Node& s) {
                   s.inputs[0]->accumulate(s.grad);
                   if (wants(s, 1)) s.inputs[1]->accumulate(-s.grad);
                 },
                 "sub");
}

Var operator*(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  return make_op(a.value().cwiseProduct(b.value()), {a, b},
                 [](Node& s) {
                   if (wants(s, 0)) s.inputs[0]->accumulate(s.grad.cwiseProduct(s.inputs[1]->value));
                   if (wants(s, 1)) s.inputs[1]->accumulate(s.grad.cwiseProduct(s.inputs[0]->value));
                 },
                 "mul");
}

Var operator-(const Var& a) { return a * Real(-1); }

Var operator*(const Var& a, Real k) {
  return make_op(a.value() * k, {a}, [k](Node& s) { s.inputs[0]->accumulate(s.grad * k); },
                 "scale");
}

Var operator*(Real k, const Var& a) { return a * k; }

Var add_scalar(const Var& a, Real k) {
  return make_op(a.value().array() + k, {a}, [](Node& s) { s.inputs[0]->accumulate(s.grad); },
                 "add_scalar");
}

Var add_bias(const Var& x, const Var& b) {
  if (b.cols() != 1 || b.rows() != x.rows()) throw ValidationError("add_bias: bias must be (rows x 1)");
  return make_op(x.value().colwise() + b.value().col(0), {x, b},
                 [](Node& s) {
                   s.inputs[0]->accumulate(s.grad);
                   if (wants(s, 1)) s.inputs[1]->accumulate(s.grad.rowwise().sum());
                 },
                 "add_bias");
}

Var scale_rows(const Var& x, const Var& g) {
  if (g.cols() != 1 || g.rows() != x.rows()) throw ValidationError("scale_rows: scale must be (rows x 1)");
  Matrix value = x.value().array().colwise() * g.value().col(0).array();
  return make_op(std::move(value), {x, g},
                 [](Node& s) {
                   const auto& gv = s.inputs[1]->value;
                   if (wants(s, 0))
                     s.inputs[0]->accumulate((s.grad.array().colwise() * gv.col(0).array()).matrix());
                   if (wants(s, 1))
                     s.inputs[1]->accumulate(s.grad.cwiseProduct(s.inputs[0]->value).rowwise().sum());
                 },
                 "scale_rows");
}

Var sum_all(std::span<const Var> terms) {
  if (terms.empty()) throw ValidationError("sum_all: no terms");
  Matrix value = terms[0].value();
  for (std::size_t i = 1; i < terms.size(); ++i) {
    check_same_shape(terms[0], terms[i], "sum_all");
    value += terms[i].value();
  }
  return make_op(std::move(value), std::vector<Var>(terms.begin(), terms.end()),
                 [](Node& s) {
                   for (auto& in : s.inputs) in->accumulate(s.grad);
                 },
                 "sum_all");
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw ValidationError("matmul: inner dimensions differ");
  return make_op(a.value() * b.value(), {a, b},
                 [](Node& s) {
                   if (wants(s, 0)) s.inputs[0]->accumulate(s.grad * s.inputs[1]->value.transpose());
                   if (wants(s, 1)) s.inputs[1]->accumulate(s.inputs[0]->value.transpose() * s.grad);
                 },
                 "matmul");
}

Var transpose(const Var& x) {
  return make_op(x.value().transpose(), {x},
                 [](Node& s) { s.inputs[0]->accumulate(s.grad.transpose()); }, "transpose");
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ValidationError("concat_rows: no parts");
  Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != parts[0].cols()) throw ValidationError("concat_rows: column counts differ");
    rows += p.rows();
  }
  Matrix value(rows, parts[0].cols());
  Index r = 0;
  for (const Var& p : parts) {
    value.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return make_op(std::move(value), std::vector<Var>(parts.begin(), parts.end()),
                 [](Node& s) {
                   Index r = 0;
                   for (auto& in : s.inputs) {
                     const Index n = in->value.rows();
                     if (in->requires_grad) in->accumulate(s.grad.middleRows(r, n));
                     r += n;
                   }
                 },
                 "concat_rows");
}

Var slice_rows(const Var& x, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > x.rows()) throw ValidationError("slice_rows: out of range");
  return make_op(x.value().middleRows(start, count), {x},
                 [start, count](Node& s) {
                   if (wants(s, 0)) s.inputs[0]->grad_storage().middleRows(start, count) += s.grad;
                 },
                 "slice_rows");
}

Var slice_cols(const Var& x, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > x.cols()) throw ValidationError("slice_cols: out of range");
  return make_op(x.value().middleCols(start, count), {x},
                 [start, count](Node& s) {
                   if (wants(s, 0)) s.inputs[0]->grad_storage().middleCols(start, count) += s.grad;
                 },
                 "slice_cols");
}

Var pad_cols(const Var& x, Index before, Index after) {
  if (before < 0 || after < 0) throw ValidationError("pad_cols: negative padding");
  Matrix value = Matrix::Zero(x.rows(), before + x.cols() + after);
  value.middleCols(before, x.cols()) = x.value();
  const Index cols = x.cols();
  return make_op(std::move(value), {x},
                 [before, cols](Node& s) {
                   if (wants(s, 0)) s.inputs[0]->grad_storage() += s.grad.middleCols(before, cols);
                 },
                 "pad_cols");
}

Var reshape(const Var& x, Index rows, Index cols) {
  if (rows * cols != x.value().size())
    throw ValidationError("reshape: " + std::to_string(x.rows()) + " x " + std::to_string(x.cols()) +
                          " cannot become " + std::to_string(rows) + " x " + std::to_string(cols));
  Matrix value = Matrix(x.value().reshaped(rows, cols));
  return make_op(std::move(value), {x},
                 [](Node& s) {
                   const Matrix& in = s.inputs[0]->value;
                   s.inputs[0]->accumulate(Matrix(s.grad.reshaped(in.rows(), in.cols())));
                 },
                 "reshape");
}

Var exp(const Var& x, Real max_value) {
  Matrix value = x.value().array().exp().min(max_value).matrix();
  return make_op(std::move(value), {x},
                 [max_value](Node& s) {
                   Matrix g = s.grad.cwiseProduct(s.value);
                   for (Index i = 0; i < g.size(); ++i)
                     if (s.value(i) >= max_value) g(i) = 0;
                   s.inputs[0]->accumulate(g);
                 },
                 "exp");
}

Var log(const Var& x) {
  return make_op(x.value().array().log().matrix(), {x},
                 [](Node& s) { s.inputs[0]->accumulate(s.grad.cwiseQuotient(s.inputs[0]->value)); },
                 "log");
}

Var sqrt(const Var& x) {
  return make_op(x.value().cwiseSqrt(), {x},
                 [](Node& s) {
                   Matrix g(s.value.rows(), s.value.cols());
                   for (Index i = 0; i < g.size(); ++i)
                     g(i) = s.value(i) > 0 ? 0.5 * s.grad(i) / s.value(i) : 0.0;
                   s.inputs[0]->accumulate(g);
                 },
                 "sqrt");
}

Var square(const Var& x) {
  return make_op(x.value().cwiseAbs2(), {x},
                 [](Node& s) { s.inputs[0]->accumulate(2.0 * s.grad.cwiseProduct(s.inputs[0]->value)); },
                 "square");
}

Var abs(const Var& x) {
  return make_op(x.value().cwiseAbs(), {x},
                 [](Node& s) {
                   s.inputs[0]->accumulate(s.grad.cwiseProduct(s.inputs[0]->value.cwiseSign()));
                 },
                 "abs");
}

Var sin(const Var& x) {
  return make_op(x.value().array().sin().matrix(), {x},
                 [](Node& s) {
                   s.inputs[0]->accumulate(s.grad.cwiseProduct(s.inputs[0]->value.array().cos().matrix()));
                 },
                 "sin");
}

Var cos(const Var& x) {
  return make_op(x.value().array().cos().matrix(), {x},
                 [](Node& s) {
                   s.inputs[0]->accumulate(-s.grad.cwiseProduct(s.inputs[0]->value.array().sin().matrix()));
                 },
                 "cos");
}

Var relu(const Var& x) { return leaky_relu(x, 0.0); }

Var leaky_relu(const Var& x, Real slope) {
  Matrix value = x.value().unaryExpr([slope](Real v) { return v > 0 ? v : slope * v; });
  return make_op(std::move(value), {x},
                 [slope](Node& s) {
                   const Matrix& in = s.inputs[0]->value;
                   Matrix g(in.rows(), in.cols());
                   for (Index i = 0; i < g.size(); ++i) g(i) = in(i) > 0 ? s.grad(i) : slope * s.grad(i);
                   s.inputs[0]->accumulate(g);
                 },
                 "leaky_relu");
}

Var gelu(const Var& x) {
  Matrix value =
      x.value().unaryExpr([](Real v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2)); });
  return make_op(std::move(value), {x},
                 [](Node& s) {
                   const Matrix& in = s.inputs[0]->value;
                   const Real inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
                   Matrix g(in.rows(), in.cols());
                   for (Index i = 0; i < g.size(); ++i) {
                     const Real v = in(i);
                     const Real cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2));
                     const Real pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
                     g(i) = s.grad(i) * (cdf + v * pdf);
                   }
                   s.inputs[0]->accumulate(g);
                 },
                 "gelu");
}

Var clamp_min(const Var& x, Real lo) {
  return make_op(x.value().cwiseMax(lo), {x},
                 [lo](Node& s) {
                   const Matrix& in = s.inputs[0]->value;
                   Matrix g = s.grad;
                   for (Index i = 0; i < g.size(); ++i)
                     if (!(in(i) > lo)) g(i) = 0;
                   s.inputs[0]->accumulate(g);
                 },
                 "clamp_min");
}

Var phase(const Var& re, const Var& im) {
  check_same_shape(re, im, "phase");
  Matrix value = phase_from_parts(re.value(), im.value());
  return make_op(std::move(value), {re, im},
                 [](Node& s) {
                   const Matrix& r = s.inputs[0]->value;
                   const Matrix& i = s.inputs[1]->value;
                   Matrix gr(r.rows(), r.cols()), gi(r.rows(), r.cols());
                   for (Index k = 0; k < r.size(); ++k) {
                     const Real d = r(k) * r(k) + i(k) * i(k);
                     if (d > 0) {
                       gr(k) = -s.grad(k) * i(k) / d;
                       gi(k) = s.grad(k) * r(k) / d;
                     } else {
                       gr(k) = gi(k) = 0;
                     }
                   }
                   if (wants(s, 0)) s.inputs[0]->accumulate(gr);
                   if (wants(s, 1)) s.inputs[1]->accumulate(gi);
                 },
                 "phase");
}

Var anti_wrap(const Var& x) {
  Matrix wrapped = x.value().unaryExpr([](Real v) { return v - kTwoPi * std::round(v / kTwoPi); });
  Matrix value = wrapped.cwiseAbs();
  return make_op(std::move(value), {x},
                 [wrapped = std::move(wrapped)](Node& s) {
                   s.inputs[0]->accumulate(s.grad.cwiseProduct(wrapped.cwiseSign()));
                 },
                 "anti_wrap");
}

Var diff_rows(const Var& x) {
  if (x.rows() < 2) throw ValidationError("diff_rows: need at least two rows");
  const Index n = x.rows() - 1;
  return make_op(x.value().bottomRows(n) - x.value().topRows(n), {x},
                 [n](Node& s) {
                   Matrix& g = s.inputs[0]->grad_storage();
                   g.bottomRows(n) += s.grad;
                   g.topRows(n) -= s.grad;
                 },
                 "diff_rows");
}

Var diff_cols(const Var& x) {
  if (x.cols() < 2) throw ValidationError("diff_cols: need at least two columns");
  const Index n = x.cols() - 1;
  return make_op(x.value().rightCols(n) - x.value().leftCols(n), {x},
                 [n](Node& s) {
                   Matrix& g = s.inputs[0]->grad_storage();
                   g.rightCols(n) += s.grad;
                   g.leftCols(n) -= s.grad;
                 },
                 "diff_cols");
}

Var sum(const Var& x) {
  return make_op(Matrix::Constant(1, 1, x.value().sum()), {x},
                 [](Node& s) {
                   const auto& in = s.inputs[0]->value;
                   s.inputs[0]->accumulate(Matrix::Constant(in.rows(), in.cols(), s.grad(0, 0)));
                 },
                 "sum");
}

Var mean(const Var& x) {
  const Real n = Real(x.value().size());
  return make_op(Matrix::Constant(1, 1, x.value().sum() / n), {x},
                 [n](Node& s) {
                   const auto& in = s.inputs[0]->value;
                   s.inputs[0]->accumulate(Matrix::Constant(in.rows(), in.cols(), s.grad(0, 0) / n));
                 },
                 "mean");
}

Var mse(const Var& a, const Var& b) {
  check_same_shape(a, b, "mse");
  const Real n = Real(a.value().size());
  const Real value = (a.value() - b.value()).squaredNorm() / n;
  return make_op(Matrix::Constant(1, 1, value), {a, b},
                 [n](Node& s) {
                   const Matrix g = (2.0 * s.grad(0, 0) / n) * (s.inputs[0]->value - s.inputs[1]->value);
                   if (wants(s, 0)) s.inputs[0]->accumulate(g);
                   if (wants(s, 1)) s.inputs[1]->accumulate(-g);
                 },
                 "mse");
}

Var mae(const Var& a, const Var& b) {
  check_same_shape(a, b, "mae");
  const Real n = Real(a.value().size());
  const Real value = (a.value() - b.value()).cwiseAbs().sum() / n;
  return make_op(Matrix::Constant(1, 1, value), {a, b},
                 [n](Node& s) {
                   const Matrix g =
                       (s.grad(0, 0) / n) * (s.inputs[0]->value - s.inputs[1]->value).cwiseSign();
                   if (wants(s, 0)) s.inputs[0]->accumulate(g);
                   if (wants(s, 1)) s.inputs[1]->accumulate(-g);
                 },
                 "mae");
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, Real eps) {
  const Index c = x.rows();
  if (gamma.rows() != c || beta.rows() != c) throw ValidationError("layer_norm: affine size mismatch");
  const Matrix& v = x.value();
  Eigen::RowVectorXd mu = v.colwise().mean();
  Matrix centered = v.rowwise() - mu;
  Eigen::RowVectorXd inv_std =
      ((centered.cwiseAbs2().colwise().sum() / Real(c)).array() + eps).rsqrt().matrix();
  Matrix xhat = centered.array().rowwise() * inv_std.array();
  Matrix value = (xhat.array().colwise() * gamma.value().col(0).array()).colwise() +
                 beta.value().col(0).array();
  return make_op(std::move(value), {x, gamma, beta},
                 [xhat = std::move(xhat), inv_std = std::move(inv_std), c](Node& s) {
                   if (wants(s, 1)) s.inputs[1]->accumulate(s.grad.cwiseProduct(xhat).rowwise().sum());
                   if (wants(s, 2)) s.inputs[2]->accumulate(s.grad.rowwise().sum());
                   if (!wants(s, 0)) return;
                   Matrix dxhat = s.grad.array().colwise() * s.inputs[1]->value.col(0).array();
                   Eigen::RowVectorXd m1 = dxhat.colwise().sum() / Real(c);
                   Eigen::RowVectorXd m2 = dxhat.cwiseProduct(xhat).colwise().sum() / Real(c);
                   Matrix dx = dxhat.rowwise() - m1;
                   dx -= (xhat.array().rowwise() * m2.array()).matrix();
                   dx = dx.array().rowwise() * inv_std.array();
                   s.inputs[0]->accumulate(dx);
                 },
                 "layer_norm");
}

Var grn(const Var& x, const Var& gamma, const Var& beta, GrnMode mode, Real eps) {
  const Index c = x.rows();
  if (gamma.rows() != c || beta.rows() != c) throw ValidationError("grn: affine size mismatch");
  const Matrix& v = x.value();
  // `response` has the shape of x; per-channel norms are broadcast in global mode.
  Matrix norms;     // global: (C x 1); per-frame: (C x T)
  Matrix response;  // n(x), broadcast to (C x T)
  if (mode == GrnMode::global) {
    norms = v.rowwise().norm();
    const Real denom = norms.mean() + eps;
    response = (norms / denom).replicate(1, v.cols());
  } else {
    norms = v.cwiseAbs();
    Eigen::RowVectorXd denom = (norms.colwise().mean().array() + eps).matrix();
    response = norms.array().rowwise() / denom.array();
  }
  Matrix value = (v.cwiseProduct(response).array().colwise() * gamma.value().col(0).array()).colwise() +
                 beta.value().col(0).array();
  value += v;
  return make_op(
      std::move(value), {x, gamma, beta},
      [norms = std::move(norms), response = std::move(response), mode, eps, c](Node& s) {
        const Matrix& v = s.inputs[0]->value;
        const auto gamma = s.inputs[1]->value.col(0).array();
        if (wants(s, 1)) s.inputs[1]->accumulate(s.grad.cwiseProduct(v).cwiseProduct(response).rowwise().sum());
        if (wants(s, 2)) s.inputs[2]->accumulate(s.grad.rowwise().sum());
        if (!wants(s, 0)) return;
        Matrix dx = s.grad + Matrix((s.grad.cwiseProduct(response).array().colwise() * gamma).matrix());
        // d(loss)/d(response), element-wise.
        Matrix dresp = (s.grad.cwiseProduct(v).array().colwise() * gamma).matrix();
        if (mode == GrnMode::global) {
          const Real denom = norms.mean() + eps;
          Vector dn = dresp.rowwise().sum();  // per channel
          const Real cross = dn.dot(norms.col(0)) / (denom * denom * Real(c));
          Vector dnorm = dn / denom - Vector::Constant(c, cross);
          for (Index ch = 0; ch < c; ++ch)
            if (norms(ch, 0) > 0) dx.row(ch) += (dnorm[ch] / norms(ch, 0)) * v.row(ch);
        } else {
          Eigen::RowVectorXd denom = (norms.colwise().mean().array() + eps).matrix();
          Eigen::RowVectorXd cross =
              (dresp.cwiseProduct(norms).colwise().sum().array() / (denom.array().square() * Real(c)))
                  .matrix();
          Matrix dnorm = (dresp.array().rowwise() / denom.array()).rowwise() - cross.array();
          dx += dnorm.cwiseProduct(v.cwiseSign());
        }
        s.inputs[0]->accumulate(dx);
      },
      "grn");
}

Var gather_rows(const Var& table, std::span<const int> indices) {
  const Index dim = table.cols();
  Matrix value(dim, Index(indices.size()));
  for (std::size_t j = 0; j < indices.size(); ++j) {
    if (indices[j] < 0 || indices[j] >= table.rows()) throw ValidationError("gather_rows: index out of range");
    value.col(Index(j)) = table.value().row(indices[j]).transpose();
  }
  std::vector<int> idx(indices.begin(), indices.end());
  return make_op(std::move(value), {table},
                 [idx = std::move(idx)](Node& s) {
                   Matrix& g = s.inputs[0]->grad_storage();
                   for (std::size_t j = 0; j < idx.size(); ++j) g.row(idx[j]) += s.grad.col(Index(j)).transpose();
                 },
                 "gather_rows");
}

Var straight_through(const Var& input, const Matrix& quantized) {
  if (input.rows() != quantized.rows() || input.cols() != quantized.cols())
    throw ValidationError("straight_through: shape mismatch");
  return make_op(quantized, {input}, [](Node& s) { s.inputs[0]->accumulate(s.grad); },
                 "straight_through");
}

}  // namespace apcodec::nn
