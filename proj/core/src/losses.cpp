#include "sgml/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sgml/errors.hpp"
#include "sgml/similarity.hpp"

namespace sgml {

void LossParams::validate() const {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be > 0");
  if (!std::isfinite(beta)) throw ConfigError("beta must be finite");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be >= 0");
  if (!(cost_pos > 0.0) || !(cost_neg > 0.0)) throw ConfigError("cost factors must be > 0");
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double clamp_probability(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

LossValue bdl(double s, Polarity polarity, const LossParams& params) {
  // d/ds softplus(z) = sigmoid(z) * dz/ds
  const bool pos = polarity == Polarity::positive;
  const double cost = pos ? params.cost_pos : params.cost_neg;
  const double scale = params.alpha * cost;
  const double z = pos ? -(params.alpha * (s - params.beta) * cost)
                       : params.alpha * (s - params.beta) * cost;
  const double dz_ds = pos ? -scale : scale;
  return {softplus(z), sigmoid(z) * dz_ds, 0.0};
}

LossValue sbdl_positive(double s, double g, const LossParams& params) {
  const double z = -(params.alpha * ((s + g) - params.beta));
  const double d = -params.alpha * sigmoid(z);
  return {softplus(z), d, d};
}

LossValue sbdl_negative(double s, double g, const LossParams& params) {
  const double z = params.alpha * ((s - g) - params.beta);
  const double d = params.alpha * sigmoid(z);
  return {softplus(z), d, -d};
}

double order_free_sum(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum;
}

namespace {

template <typename PairLoss>
PairBatchLoss average_pairs(std::span<const PairSample> pairs, PairLoss&& loss,
                            const char* what) {
  PairBatchLoss out;
  for (const auto& p : pairs) {
    (p.polarity == Polarity::positive ? out.n_pos : out.n_neg) += 1;
  }
  if (out.n_pos == 0 || out.n_neg == 0) {
    throw DegenerateBatchError(std::string(what) + ": batch has " +
                               std::to_string(out.n_pos) + " positive and " +
                               std::to_string(out.n_neg) + " negative pairs");
  }
  const double inv_m = 1.0 / static_cast<double>(out.n_pos);
  const double inv_n = 1.0 / static_cast<double>(out.n_neg);
  std::vector<double> pos_values;
  std::vector<double> neg_values;
  pos_values.reserve(out.n_pos);
  neg_values.reserve(out.n_neg);
  out.d_ds.resize(pairs.size());
  out.d_dg.resize(pairs.size());
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const LossValue lv = loss(pairs[k]);
    const bool pos = pairs[k].polarity == Polarity::positive;
    const double w = pos ? inv_m : inv_n;
    (pos ? pos_values : neg_values).push_back(lv.value);
    out.d_ds[k] = lv.d_ds * w;
    out.d_dg[k] = lv.d_dg * w;
  }
  out.positive_term = order_free_sum(std::move(pos_values)) * inv_m;
  out.negative_term = order_free_sum(std::move(neg_values)) * inv_n;
  out.value = out.positive_term + out.negative_term;
  return out;
}

}  // namespace

PairBatchLoss sbdl_batch(std::span<const PairSample> pairs, const LossParams& params) {
  return average_pairs(
      pairs,
      [&](const PairSample& p) {
        return p.polarity == Polarity::positive ? sbdl_positive(p.s, p.g, params)
                                                : sbdl_negative(p.s, p.g, params);
      },
      "sbdl_batch");
}

PairBatchLoss bdl_batch(std::span<const PairSample> pairs, const LossParams& params) {
  return average_pairs(
      pairs, [&](const PairSample& p) { return bdl(p.s, p.polarity, params); }, "bdl_batch");
}

AttributeLoss bce(std::span<const double> probs, std::span<const std::uint8_t> labels) {
  if (probs.size() != labels.size()) {
    throw DomainError("bce: length mismatch (" + std::to_string(probs.size()) + " probs vs " +
                      std::to_string(labels.size()) + " labels)");
  }
  AttributeLoss out;
  out.d_dp.resize(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (labels[i] > 1) throw DomainError("bce: label is not binary");
    const double p = clamp_probability(probs[i]);
    if (labels[i] == 1) {
      out.value -= std::log(p);
      out.d_dp[i] = -1.0 / p;
    } else {
      out.value -= std::log1p(-p);
      out.d_dp[i] = 1.0 / (1.0 - p);
    }
  }
  return out;
}

ObjectiveValue sgml_objective(std::span<const PairSample> pairs,
                              std::span<const AttributeTerm> attr_terms,
                              const LossParams& params) {
  if (attr_terms.empty()) throw DomainError("sgml_objective: no attribute terms");
  ObjectiveValue out;
  out.pairs = sbdl_batch(pairs, params);
  out.metric = out.pairs.value;

  std::vector<double> values;
  values.reserve(attr_terms.size());
  out.d_dprobs.reserve(attr_terms.size());
  const double w = params.lambda / static_cast<double>(attr_terms.size());
  for (const auto& term : attr_terms) {
    AttributeLoss al = bce(term.probs, term.labels);
    values.push_back(al.value);
    for (double& d : al.d_dp) d *= w;
    out.d_dprobs.push_back(std::move(al.d_dp));
  }
  out.attribute = order_free_sum(std::move(values)) / static_cast<double>(attr_terms.size());
  out.value = out.metric + params.lambda * out.attribute;
  return out;
}

}  // namespace sgml
