#pragma once

// Residual vector quantisation.
//
// Codes are (dim x frames) matrices; codebooks are (entries x dim) with one
// vector per row; tokens are (stages x frames) 0-based indices, so column f
// holds the Q indices of frame f.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "apcodec/dsp.hpp"
#include "apcodec/error.hpp"
#include "apcodec/nn/layers.hpp"

namespace apcodec {

using TokenMatrix = Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic>;

/// f_s / (w_s * D) * Q * log2(M) / 1000.
inline double bitrate_kbps(double sample_rate, double frame_shift, double downsample, double stages,
                           double codebook_size) {
  return sample_rate / (frame_shift * downsample) * stages * std::log2(codebook_size) / 1000.0;
}

/// Row of `book` closest to `v` in squared Euclidean distance; ties go to the
/// lowest index.
template <typename Scalar, typename Derived>
Eigen::Index nearest_entry(const Mat<Scalar>& book, const Eigen::MatrixBase<Derived>& v) {
  Eigen::Index best = 0;
  Scalar best_dist = std::numeric_limits<Scalar>::infinity();
  for (Eigen::Index m = 0; m < book.rows(); ++m) {
    Scalar d = 0;
    for (Eigen::Index k = 0; k < book.cols(); ++k) {
      const Scalar e = v(k) - book(m, k);
      d += e * e;
    }
    if (d < best_dist) {
      best_dist = d;
      best = m;
    }
  }
  return best;
}

template <typename Scalar>
struct RvqTrace {
  Mat<Scalar> quantized;              // sum of stage outputs
  TokenMatrix tokens;                 // (stages x frames)
  std::vector<Mat<Scalar>> inputs;    // residual entering each stage
  std::vector<Mat<Scalar>> outputs;   // selected vectors of each stage
  Mat<Scalar> residual;               // what is left after the last stage
};

template <typename Scalar>
void check_books(const std::vector<Mat<Scalar>>& books, Eigen::Index dim) {
  if (books.empty()) throw ConfigError("quantizer needs at least one codebook");
  for (const auto& b : books) {
    if (b.rows() < 2) throw ConfigError("codebooks need at least two entries");
    if (b.cols() != dim || b.rows() != books.front().rows())
      throw ValidationError("codebook shape mismatch (expected " + std::to_string(books.front().rows()) +
                            " x " + std::to_string(dim) + ")");
  }
}

template <typename Scalar>
RvqTrace<Scalar> rvq_quantize(const Mat<Scalar>& code, const std::vector<Mat<Scalar>>& books) {
  check_books(books, code.rows());
  const Eigen::Index frames = code.cols();
  RvqTrace<Scalar> t;
  t.tokens.resize(Eigen::Index(books.size()), frames);
  t.quantized = Mat<Scalar>::Zero(code.rows(), frames);
  Mat<Scalar> residual = code;
  for (std::size_t q = 0; q < books.size(); ++q) {
    Mat<Scalar> chosen(code.rows(), frames);
    for (Eigen::Index f = 0; f < frames; ++f) {
      const Eigen::Index m = nearest_entry(books[q], residual.col(f));
      t.tokens(Eigen::Index(q), f) = std::int32_t(m);
      chosen.col(f) = books[q].row(m).transpose();
    }
    t.inputs.push_back(residual);
    residual -= chosen;
    t.quantized += chosen;
    t.outputs.push_back(std::move(chosen));
  }
  t.residual = std::move(residual);
  return t;
}

/// Sum over stages of the selected vectors; bit-identical to
/// rvq_quantize(...).quantized for the tokens it produced.
template <typename Scalar>
Mat<Scalar> rvq_dequantize(const TokenMatrix& tokens, const std::vector<Mat<Scalar>>& books) {
  if (books.empty() || tokens.rows() != Eigen::Index(books.size()))
    throw ValidationError("token stage count does not match the number of codebooks");
  const Eigen::Index dim = books.front().cols();
  check_books(books, dim);
  Mat<Scalar> out = Mat<Scalar>::Zero(dim, tokens.cols());
  for (Eigen::Index q = 0; q < tokens.rows(); ++q) {
    Mat<Scalar> chosen(dim, tokens.cols());
    for (Eigen::Index f = 0; f < tokens.cols(); ++f) {
      const std::int32_t m = tokens(q, f);
      if (m < 0 || m >= books[q].rows()) throw ValidationError("token index out of range");
      chosen.col(f) = books[q].row(m).transpose();
    }
    out += chosen;
  }
  return out;
}

struct RvqOptions {
  double usage_decay = 0.99;
  double dead_threshold = 1e-3;
  int warmup_updates = 50;
};

/// Trainable residual quantiser with usage tracking.
class ResidualVQ {
 public:
  using Options = RvqOptions;

  struct Output {
    nn::Var quantized;  // value of the quantised code, gradient straight to the input
    nn::Var loss;       // quantisation loss with detached cross terms
    RvqTrace<double> trace;
  };

  ResidualVQ() = default;
  ResidualVQ(nn::ParameterStore& store, const std::string& name, int stages, int entries, int dim,
             Options options = {});

  int stages() const { return int(books_.size()); }
  int entries() const { return entries_; }
  int dim() const { return dim_; }

  /// Quantises `code` (dim x frames). The loss is
  ///   MSE(sum_q L^q_hat, C) + sum_q MSE(L^q_hat, L^q)
  /// where the stage inputs L^q only carry gradient to C and the selected
  /// vectors only to their codebook, so encoder and codebooks receive their
  /// own partial derivatives.
  Output forward(const nn::Var& code) const;

  RvqTrace<double> quantize(const nn::Matrix& code) const;
  nn::Matrix dequantize(const TokenMatrix& tokens) const;
  std::vector<nn::Matrix> codebooks() const;
  const std::vector<nn::Var>& codebook_vars() const { return books_; }

  /// Lloyd k-means on `samples` (dim x n) stage by stage, each stage fitting
  /// the residuals left by the previous one.
  void kmeans_init(const nn::Matrix& samples, std::mt19937_64& rng, int iterations = 10);

  /// EMA of per-entry selection frequency; entries below the threshold after
  /// warm-up are reseeded from the stage inputs in `trace`. Returns the number
  /// of reseeded entries.
  int update_usage(const RvqTrace<double>& trace, std::mt19937_64& rng);

  const std::vector<Eigen::VectorXd>& usage() const { return usage_; }
  void set_usage(std::vector<Eigen::VectorXd> usage, int updates);
  int usage_updates() const { return updates_; }
  /// Entropy (bits) of the EMA usage distribution of each stage.
  std::vector<double> usage_entropy() const;

 private:
  std::vector<nn::Var> books_;
  std::vector<Eigen::VectorXd> usage_;
  int entries_ = 0;
  int dim_ = 0;
  int updates_ = 0;
  Options options_;
};

}  // namespace apcodec
