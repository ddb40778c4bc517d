#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace sgml {

enum class Polarity { positive, negative };

/// Scalar hyper-parameters shared by every loss.
///   alpha    scaling of the deviance curve (> 0)
///   beta     translation of the deviance curve
///   lambda   weight of the attribute (BCE) term in the joint objective (>= 0)
///   cost_*   per-polarity cost factor, used by plain BDL only
struct LossParams {
  double alpha = 2.0;
  double beta = 0.5;
  double lambda = 1.0;
  double cost_pos = 1.0;
  double cost_neg = 1.0;

  void validate() const;
};

/// One scored pair: embedding cosine similarity `s`, SGS value `g`.
struct PairSample {
  double s = 0.0;
  double g = 0.0;
  Polarity polarity = Polarity::positive;
};

/// A loss value with its partial derivatives in the scalar inputs.
struct LossValue {
  double value = 0.0;
  double d_ds = 0.0;
  double d_dg = 0.0;
};

/// Batch pair loss: value plus one gradient entry per input pair, already
/// scaled by the 1/M or 1/N averaging factor.
struct PairBatchLoss {
  double value = 0.0;
  double positive_term = 0.0;
  double negative_term = 0.0;
  std::vector<double> d_ds;
  std::vector<double> d_dg;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

/// Per-sample BCE summed over attributes, with dL/dp per attribute.
struct AttributeLoss {
  double value = 0.0;
  std::vector<double> d_dp;
};

/// Numerically stable log(1 + e^x).
double softplus(double x);
/// Numerically stable 1 / (1 + e^-x).
double sigmoid(double x);
double clamp_probability(double p);

/// Binomial deviance: log(1 + exp(-(2y-1) * alpha * (s - beta) * C_y)).
LossValue bdl(double s, Polarity polarity, const LossParams& params);

/// Soft-binomial deviance for a positive pair: log(1 + exp(-alpha (s + g - beta))).
LossValue sbdl_positive(double s, double g, const LossParams& params);

/// Soft-binomial deviance for a negative pair: log(1 + exp(alpha (s - g - beta))).
LossValue sbdl_negative(double s, double g, const LossParams& params);

/// mean over positive pairs + mean over negative pairs of the soft loss.
/// Throws DegenerateBatchError when either side is empty.
PairBatchLoss sbdl_batch(std::span<const PairSample> pairs, const LossParams& params);

/// Same averaging as sbdl_batch with plain BDL (g ignored).
PairBatchLoss bdl_batch(std::span<const PairSample> pairs, const LossParams& params);

/// -sum_i [a_i log p_i + (1 - a_i) log(1 - p_i)] with p clamped to
/// [1e-7, 1 - 1e-7]. Gradient is taken at the clamped point.
AttributeLoss bce(std::span<const double> probs, std::span<const std::uint8_t> labels);

struct AttributeTerm {
  std::span<const double> probs;
  std::span<const std::uint8_t> labels;
};

struct ObjectiveValue {
  double value = 0.0;
  double metric = 0.0;
  double attribute = 0.0;  // mean BCE over terms, before lambda
  PairBatchLoss pairs;
  std::vector<std::vector<double>> d_dprobs;  // already scaled by lambda / terms
};

/// sbdl_batch(pairs) + lambda * mean_t bce(attr_terms[t]).
ObjectiveValue sgml_objective(std::span<const PairSample> pairs,
                              std::span<const AttributeTerm> attr_terms,
                              const LossParams& params);

/// Sum of `values` after sorting, so the result does not depend on the
/// order the values were produced in.
double order_free_sum(std::vector<double> values);

}  // namespace sgml
