#include "apcodec/quantizer.hpp"

#include <algorithm>

namespace apcodec {

using nn::Index;
using nn::Matrix;
using nn::Var;

ResidualVQ::ResidualVQ(nn::ParameterStore& store, const std::string& name, int stages, int entries,
                       int dim, Options options)
    : entries_(entries), dim_(dim), options_(options) {
  if (stages < 1) throw ConfigError("quantizer needs at least one stage");
  if (entries < 2) throw ConfigError("codebooks need at least two entries");
  if (dim < 1) throw ConfigError("code dimension must be positive");
  for (int q = 0; q < stages; ++q) {
    books_.push_back(store.add_normal(name + ".book" + std::to_string(q), entries, dim));
    usage_.push_back(Eigen::VectorXd::Ones(entries));
  }
}

std::vector<Matrix> ResidualVQ::codebooks() const {
  std::vector<Matrix> out;
  out.reserve(books_.size());
  for (const Var& b : books_) out.push_back(b.value());
  return out;
}

RvqTrace<double> ResidualVQ::quantize(const Matrix& code) const {
  if (code.rows() != dim_)
    throw ValidationError("code has " + std::to_string(code.rows()) + " dims, quantizer expects " +
                          std::to_string(dim_));
  return rvq_quantize(code, codebooks());
}

Matrix ResidualVQ::dequantize(const TokenMatrix& tokens) const { return rvq_dequantize(tokens, codebooks()); }

ResidualVQ::Output ResidualVQ::forward(const Var& code) const {
  Output out;
  out.trace = quantize(code.value());
  std::vector<Var> selected;
  std::vector<Var> stage_terms;
  Matrix prefix = Matrix::Zero(code.rows(), code.cols());
  for (int q = 0; q < stages(); ++q) {
    const auto row = out.trace.tokens.row(q);
    std::vector<int> indices(row.size());
    for (Index f = 0; f < row.size(); ++f) indices[f] = row(f);
    Var chosen = nn::gather_rows(books_[q], indices);
    Var stage_input = code - nn::constant(prefix);
    stage_terms.push_back(nn::mse(chosen, stage_input));
    prefix += out.trace.outputs[q];
    selected.push_back(chosen);
  }
  out.loss = nn::mse(nn::sum_all(selected), code) + nn::sum_all(stage_terms);
  out.quantized = nn::straight_through(code, out.trace.quantized);
  return out;
}

void ResidualVQ::kmeans_init(const Matrix& samples, std::mt19937_64& rng, int iterations) {
  if (samples.rows() != dim_) throw ValidationError("k-means samples have the wrong dimension");
  if (samples.cols() == 0) throw EmptyInputError("k-means needs at least one sample");
  const Index n = samples.cols();
  std::uniform_int_distribution<Index> pick(0, n - 1);
  std::normal_distribution<double> jitter(0.0, 1.0);
  Matrix residual = samples;
  for (Var& book : books_) {
    const double spread = std::max(1e-6, std::sqrt(residual.cwiseAbs2().mean()));
    Matrix centroids(entries_, dim_);
    for (int m = 0; m < entries_; ++m) {
      centroids.row(m) = residual.col(pick(rng)).transpose();
      // Jitter so duplicate picks (n < entries) do not collapse.
      for (int k = 0; k < dim_; ++k) centroids(m, k) += 1e-3 * spread * jitter(rng);
    }
    std::vector<Index> assign(n, 0);
    for (int it = 0; it < iterations; ++it) {
      for (Index i = 0; i < n; ++i) assign[i] = nearest_entry(centroids, residual.col(i));
      Matrix sums = Matrix::Zero(entries_, dim_);
      Eigen::VectorXd counts = Eigen::VectorXd::Zero(entries_);
      for (Index i = 0; i < n; ++i) {
        sums.row(assign[i]) += residual.col(i).transpose();
        counts[assign[i]] += 1;
      }
      for (int m = 0; m < entries_; ++m)
        if (counts[m] > 0) centroids.row(m) = sums.row(m) / counts[m];
    }
    for (Index i = 0; i < n; ++i) {
      assign[i] = nearest_entry(centroids, residual.col(i));
      residual.col(i) -= centroids.row(assign[i]).transpose();
    }
    book.mutable_value() = centroids;
  }
}

int ResidualVQ::update_usage(const RvqTrace<double>& trace, std::mt19937_64& rng) {
  if (trace.tokens.rows() != stages()) throw ValidationError("trace does not match the quantizer");
  ++updates_;
  int reseeded = 0;
  const double d = options_.usage_decay;
  for (int q = 0; q < stages(); ++q) {
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(entries_);
    for (Index f = 0; f < trace.tokens.cols(); ++f) counts[trace.tokens(q, f)] += 1;
    usage_[q] = d * usage_[q] + (1 - d) * counts;
    if (updates_ <= options_.warmup_updates || trace.inputs[q].cols() == 0) continue;
    const Matrix& inputs = trace.inputs[q];
    std::uniform_int_distribution<Index> pick(0, inputs.cols() - 1);
    std::normal_distribution<double> jitter(0.0, 1e-4);
    Matrix book = books_[q].value();
    for (int m = 0; m < entries_; ++m) {
      if (usage_[q][m] >= options_.dead_threshold) continue;
      book.row(m) = inputs.col(pick(rng)).transpose();
      for (int k = 0; k < dim_; ++k) book(m, k) += jitter(rng);
      usage_[q][m] = 1.0;
      ++reseeded;
    }
    Var v = books_[q];
    v.mutable_value() = std::move(book);
  }
  return reseeded;
}

void ResidualVQ::set_usage(std::vector<Eigen::VectorXd> usage, int updates) {
  if (usage.size() != usage_.size()) throw CheckpointError("usage statistics do not match the quantizer");
  for (const auto& u : usage)
    if (u.size() != entries_) throw CheckpointError("usage statistics do not match the quantizer");
  usage_ = std::move(usage);
  updates_ = updates;
}

std::vector<double> ResidualVQ::usage_entropy() const {
  std::vector<double> out;
  for (const auto& u : usage_) {
    const double total = u.sum();
    double h = 0;
    if (total > 0)
      for (Index m = 0; m < u.size(); ++m) {
        const double p = u[m] / total;
        if (p > 0) h -= p * std::log2(p);
      }
    out.push_back(h);
  }
  return out;
}

}  // namespace apcodec
