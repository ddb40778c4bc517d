#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "sgml/checkpoint.hpp"
#include "sgml/dataset.hpp"
#include "sgml/losses.hpp"
#include "sgml/network.hpp"
#include "sgml/sampling.hpp"

namespace sgml {

/// Training objective:
///   metric_only  BDL on pairs
///   attr_only    BCE on attributes
///   multitask    BDL + lambda * BCE (attributes do not touch the pair loss)
///   sgml         SBDL with per-pair SGS + lambda * BCE
enum class Variant { metric_only, attr_only, multitask, sgml };
enum class SamplingMethod { image_wise, batch_wise };
enum class SgsSource { predicted, ground_truth };

std::string to_string(Variant v);
std::string to_string(SamplingMethod m);
std::string to_string(SgsSource s);
Variant variant_from_string(const std::string& s);
SamplingMethod sampling_from_string(const std::string& s);
SgsSource sgs_source_from_string(const std::string& s);

struct TrainConfig {
  Variant variant = Variant::sgml;
  SamplingMethod sampling = SamplingMethod::batch_wise;
  std::size_t n_anchors = 60;    // image-wise: triplets per batch
  std::size_t n_classes = 41;    // batch-wise: classes per batch
  std::size_t m_per_class = 4;   // batch-wise: records per class
  LossParams loss;
  double learning_rate = 1e-4;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;
  SgsSource sgs_source = SgsSource::predicted;
  bool sgs_backprop = false;
  std::vector<std::size_t> trunk_dims{256, 2048};
  std::size_t fc_dim = 1024;
  std::size_t emb_dim = 512;

  void validate() const;
  NetworkShape shape_for(std::size_t input_dim, std::size_t attr_dim) const;
};

/// Canonical JSON text of a config (stable key order).
std::string to_json(const TrainConfig& config);
/// Fields present in `json` override the corresponding fields of `base`.
TrainConfig train_config_from_json(const std::string& json, TrainConfig base = {});

/// Training records pulled out of a Dataset split.
struct TrainingSet {
  Matrix features;
  std::vector<int> labels;
  std::vector<std::vector<std::uint8_t>> attributes;

  static TrainingSet from(const Dataset& dataset, const std::vector<std::size_t>& indices);
  std::size_t size() const { return labels.size(); }
};

struct StepRecord {
  std::size_t step = 0;
  double metric_loss = 0.0;
  double attribute_loss = 0.0;
  double total_loss = 0.0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

struct TrainingHistory {
  std::vector<StepRecord> steps;
  std::size_t skipped_anchors = 0;
  std::size_t resampled_batches = 0;

  std::string to_csv() const;
};

/// One PairSample per pair (positives first, then negatives): s from the
/// embeddings, g from `attributes` when given (otherwise g = 0). All-zero
/// embedding rows are nudged before the cosine (see nudge_zero_rows).
std::vector<PairSample> build_pair_samples(const Matrix& embeddings, const Matrix* attributes,
                                           const PairList& pairs);

/// Loss and exact parameter gradients for one batch.
struct BatchObjective {
  double metric = 0.0;
  double attribute = 0.0;
  double total = 0.0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  ParamGrads grads;
};

/// Forward + loss + backward for the batch rows `inputs` with row-aligned
/// attribute bits. The pair list indexes those rows.
BatchObjective evaluate_batch(const TrainConfig& config, const NetworkParams& params,
                              const Matrix& inputs,
                              std::span<const std::vector<std::uint8_t>> attributes,
                              const PairList& pairs);

struct TrainResult {
  Checkpoint checkpoint;
  TrainingHistory history;
};

/// Raised when training cannot continue. `last_good` holds the model and
/// history as of the last successful step.
class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(const std::string& what, TrainResult last_good)
      : std::runtime_error(what), last_good_(std::move(last_good)) {}
  const TrainResult& last_good() const { return last_good_; }

 private:
  TrainResult last_good_;
};

/// Steps that visit `n_records` once at `records_per_batch` records per step.
std::size_t steps_per_epoch(std::size_t n_records, std::size_t records_per_batch);

TrainResult train(const TrainConfig& config, const TrainingSet& data);

}  // namespace sgml
