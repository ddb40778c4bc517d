#include "sgml/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include <json.hpp>

#include "sgml/errors.hpp"
#include "sgml/similarity.hpp"

namespace sgml {

using nlohmann::ordered_json;

std::string to_string(Variant v) {
  switch (v) {
    case Variant::metric_only:
      return "metric_only";
    case Variant::attr_only:
      return "attr_only";
    case Variant::multitask:
      return "multitask";
    case Variant::sgml:
      return "sgml";
  }
  return "?";
}

std::string to_string(SamplingMethod m) { return m == SamplingMethod::image_wise ? "image" : "batch"; }
std::string to_string(SgsSource s) { return s == SgsSource::predicted ? "predicted" : "truth"; }

Variant variant_from_string(const std::string& s) {
  if (s == "metric_only" || s == "metric-only") return Variant::metric_only;
  if (s == "attr_only" || s == "attr-only") return Variant::attr_only;
  if (s == "multitask") return Variant::multitask;
  if (s == "sgml") return Variant::sgml;
  throw ConfigError("unknown variant '" + s + "' (metric_only, attr_only, multitask, sgml)");
}

SamplingMethod sampling_from_string(const std::string& s) {
  if (s == "image" || s == "image_wise") return SamplingMethod::image_wise;
  if (s == "batch" || s == "batch_wise") return SamplingMethod::batch_wise;
  throw ConfigError("unknown sampling '" + s + "' (image, batch)");
}

SgsSource sgs_source_from_string(const std::string& s) {
  if (s == "predicted") return SgsSource::predicted;
  if (s == "truth" || s == "ground_truth") return SgsSource::ground_truth;
  throw ConfigError("unknown sgs source '" + s + "' (predicted, truth)");
}

void TrainConfig::validate() const {
  loss.validate();
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be > 0");
  if (epochs == 0) throw ConfigError("epochs must be >= 1");
  if (sampling == SamplingMethod::image_wise && n_anchors == 0) throw ConfigError("n_anchors must be >= 1");
  if (sampling == SamplingMethod::batch_wise && (n_classes < 2 || m_per_class == 0)) {
    throw ConfigError("batch-wise sampling needs n_classes >= 2 and m_per_class >= 1");
  }
  if (fc_dim == 0 || emb_dim == 0) throw ConfigError("fc_dim and emb_dim must be >= 1");
  for (std::size_t w : trunk_dims) {
    if (w == 0) throw ConfigError("trunk widths must be >= 1");
  }
}

NetworkShape TrainConfig::shape_for(std::size_t input_dim, std::size_t attr_dim) const {
  NetworkShape s;
  s.input_dim = input_dim;
  s.trunk_dims = trunk_dims;
  s.fc_dim = fc_dim;
  s.emb_dim = emb_dim;
  s.attr_dim = attr_dim;
  return s;
}

std::string to_json(const TrainConfig& c) {
  ordered_json j;
  j["variant"] = to_string(c.variant);
  j["sampling"] = to_string(c.sampling);
  j["n_anchors"] = c.n_anchors;
  j["n_classes"] = c.n_classes;
  j["m_per_class"] = c.m_per_class;
  j["alpha"] = c.loss.alpha;
  j["beta"] = c.loss.beta;
  j["lambda"] = c.loss.lambda;
  j["cost_pos"] = c.loss.cost_pos;
  j["cost_neg"] = c.loss.cost_neg;
  j["learning_rate"] = c.learning_rate;
  j["epochs"] = c.epochs;
  j["seed"] = c.seed;
  j["sgs_source"] = to_string(c.sgs_source);
  j["sgs_backprop"] = c.sgs_backprop;
  j["trunk_dims"] = c.trunk_dims;
  j["fc_dim"] = c.fc_dim;
  j["emb_dim"] = c.emb_dim;
  return j.dump();
}

TrainConfig train_config_from_json(const std::string& json, TrainConfig base) {
  ordered_json j;
  try {
    j = ordered_json::parse(json);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("train config: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("train config: expected a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "variant") base.variant = variant_from_string(value.get<std::string>());
      else if (key == "sampling") base.sampling = sampling_from_string(value.get<std::string>());
      else if (key == "n_anchors") base.n_anchors = value.get<std::size_t>();
      else if (key == "n_classes") base.n_classes = value.get<std::size_t>();
      else if (key == "m_per_class") base.m_per_class = value.get<std::size_t>();
      else if (key == "alpha") base.loss.alpha = value.get<double>();
      else if (key == "beta") base.loss.beta = value.get<double>();
      else if (key == "lambda") base.loss.lambda = value.get<double>();
      else if (key == "cost_pos") base.loss.cost_pos = value.get<double>();
      else if (key == "cost_neg") base.loss.cost_neg = value.get<double>();
      else if (key == "learning_rate") base.learning_rate = value.get<double>();
      else if (key == "epochs") base.epochs = value.get<std::size_t>();
      else if (key == "seed") base.seed = value.get<std::uint64_t>();
      else if (key == "sgs_source") base.sgs_source = sgs_source_from_string(value.get<std::string>());
      else if (key == "sgs_backprop") base.sgs_backprop = value.get<bool>();
      else if (key == "trunk_dims") base.trunk_dims = value.get<std::vector<std::size_t>>();
      else if (key == "fc_dim") base.fc_dim = value.get<std::size_t>();
      else if (key == "emb_dim") base.emb_dim = value.get<std::size_t>();
      else throw ParseError("train config: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("train config: ") + e.what());
  }
  return base;
}

TrainingSet TrainingSet::from(const Dataset& dataset, const std::vector<std::size_t>& indices) {
  TrainingSet set;
  set.features = dataset.features(indices);
  set.labels = dataset.labels(indices);
  set.attributes.reserve(indices.size());
  for (std::size_t i : indices) set.attributes.push_back(dataset.records.at(i).attributes);
  return set;
}

std::string TrainingHistory::to_csv() const {
  std::string out = "step,metric_loss,attribute_loss,total_loss,n_pos,n_neg\n";
  for (const auto& s : steps) {
    out += std::to_string(s.step) + "," + format_real(s.metric_loss) + "," + format_real(s.attribute_loss) +
           "," + format_real(s.total_loss) + "," + std::to_string(s.n_pos) + "," + std::to_string(s.n_neg) + "\n";
  }
  return out;
}

namespace {

const IndexPair& pair_at(const PairList& pairs, std::size_t k) {
  return k < pairs.positives.size() ? pairs.positives[k] : pairs.negatives[k - pairs.positives.size()];
}

bool uses_pairs(Variant v) { return v != Variant::attr_only; }
bool uses_attributes(Variant v) { return v != Variant::metric_only; }

Matrix attribute_matrix(std::span<const std::vector<std::uint8_t>> attributes, std::size_t k) {
  Matrix m(static_cast<Eigen::Index>(attributes.size()), static_cast<Eigen::Index>(k));
  for (std::size_t r = 0; r < attributes.size(); ++r) {
    if (attributes[r].size() != k) throw DomainError("attribute row has the wrong length");
    for (std::size_t c = 0; c < k; ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = attributes[r][c];
  }
  return m;
}

// Adds scale * d cos(rows_i, rows_j) / d rows_i into grad row i and the
// mirrored term into row j.
void scatter_cosine_gradient(const Matrix& rows, const IndexPair& p, double scale, Matrix& grad,
                             std::vector<double>& scratch) {
  scratch.resize(static_cast<std::size_t>(rows.cols()));
  const auto a = row_span(rows, static_cast<Eigen::Index>(p.first));
  const auto b = row_span(rows, static_cast<Eigen::Index>(p.second));
  cosine_gradient(a, b, scratch);
  auto ga = row_span(grad, static_cast<Eigen::Index>(p.first));
  for (std::size_t i = 0; i < scratch.size(); ++i) ga[i] += scale * scratch[i];
  cosine_gradient(b, a, scratch);
  auto gb = row_span(grad, static_cast<Eigen::Index>(p.second));
  for (std::size_t i = 0; i < scratch.size(); ++i) gb[i] += scale * scratch[i];
}

}  // namespace

std::vector<PairSample> build_pair_samples(const Matrix& embeddings, const Matrix* attributes,
                                           const PairList& pairs) {
  const Matrix emb = nudge_zero_rows(embeddings);
  const std::size_t total = pairs.positives.size() + pairs.negatives.size();
  const auto rows = static_cast<std::size_t>(emb.rows());
  std::vector<PairSample> out;
  out.reserve(total);
  for (std::size_t k = 0; k < total; ++k) {
    const IndexPair& p = pair_at(pairs, k);
    if (p.first >= rows || p.second >= rows) throw DomainError("build_pair_samples: pair index out of range");
    PairSample sample;
    sample.polarity = k < pairs.positives.size() ? Polarity::positive : Polarity::negative;
    sample.s = cosine_similarity(row_span(emb, static_cast<Eigen::Index>(p.first)),
                                 row_span(emb, static_cast<Eigen::Index>(p.second)));
    if (attributes) {
      sample.g = sgs_mapping(row_span(*attributes, static_cast<Eigen::Index>(p.first)),
                             row_span(*attributes, static_cast<Eigen::Index>(p.second)));
    }
    out.push_back(sample);
  }
  return out;
}

BatchObjective evaluate_batch(const TrainConfig& config, const NetworkParams& params,
                              const Matrix& inputs,
                              std::span<const std::vector<std::uint8_t>> attributes,
                              const PairList& pairs) {
  const ForwardOutput fwd = forward(params, inputs);
  const Eigen::Index n = inputs.rows();
  const std::size_t k_attr = params.shape.attr_dim;
  const LossParams& lp = config.loss;
  Matrix d_emb = Matrix::Zero(n, static_cast<Eigen::Index>(params.shape.emb_dim));
  Matrix d_probs = Matrix::Zero(n, static_cast<Eigen::Index>(k_attr));
  BatchObjective out;
  out.n_pos = pairs.positives.size();
  out.n_neg = pairs.negatives.size();

  if (uses_pairs(config.variant)) {
    const bool soft = config.variant == Variant::sgml;
    std::optional<Matrix> truth;
    const Matrix* sgs_rows = nullptr;
    if (soft) {
      if (config.sgs_source == SgsSource::predicted) {
        sgs_rows = &fwd.attr_probs;
      } else {
        truth = attribute_matrix(attributes, k_attr);
        sgs_rows = &*truth;
      }
    }
    const auto samples = build_pair_samples(fwd.embeddings, sgs_rows, pairs);
    const PairBatchLoss loss = soft ? sbdl_batch(samples, lp) : bdl_batch(samples, lp);
    out.metric = loss.value;

    const Matrix emb = nudge_zero_rows(fwd.embeddings);
    std::vector<double> scratch;
    const bool sgs_grad = soft && config.sgs_backprop && config.sgs_source == SgsSource::predicted;
    for (std::size_t k = 0; k < samples.size(); ++k) {
      const IndexPair& p = pair_at(pairs, k);
      scatter_cosine_gradient(emb, p, loss.d_ds[k], d_emb, scratch);
      if (sgs_grad) scatter_cosine_gradient(fwd.attr_probs, p, loss.d_dg[k], d_probs, scratch);
    }
  }

  if (uses_attributes(config.variant)) {
    if (attributes.size() != static_cast<std::size_t>(n)) {
      throw DomainError("evaluate_batch: attribute rows do not match the batch");
    }
    const double weight = config.variant == Variant::attr_only ? 1.0 : lp.lambda;
    const double per_row = weight / static_cast<double>(n);
    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(n));
    for (Eigen::Index r = 0; r < n; ++r) {
      const AttributeLoss al = bce(row_span(fwd.attr_probs, r), attributes[static_cast<std::size_t>(r)]);
      values.push_back(al.value);
      auto row = row_span(d_probs, r);
      for (std::size_t c = 0; c < k_attr; ++c) row[c] += per_row * al.d_dp[c];
    }
    out.attribute = order_free_sum(std::move(values)) / static_cast<double>(n);
  }

  switch (config.variant) {
    case Variant::metric_only:
      out.total = out.metric;
      break;
    case Variant::attr_only:
      out.total = out.attribute;
      break;
    case Variant::multitask:
    case Variant::sgml:
      out.total = out.metric + lp.lambda * out.attribute;
      break;
  }
  out.grads = backward(params, fwd.cache, d_emb, d_probs);
  return out;
}

std::size_t steps_per_epoch(std::size_t n_records, std::size_t records_per_batch) {
  const std::size_t per_batch = std::max<std::size_t>(1, records_per_batch);
  return std::max<std::size_t>(1, (n_records + per_batch - 1) / per_batch);
}

namespace {

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kSamplingStream = 2;
constexpr int kMaxResamples = 10;

struct Batch {
  std::vector<std::size_t> slots;
  PairList pairs;
};

std::vector<int> slot_labels(const TrainingSet& data, const std::vector<std::size_t>& slots) {
  std::vector<int> out;
  out.reserve(slots.size());
  for (std::size_t s : slots) out.push_back(data.labels[s]);
  return out;
}

}  // namespace

TrainResult train(const TrainConfig& config, const TrainingSet& data) {
  config.validate();
  if (data.size() == 0) throw ConfigError("training set is empty");
  const std::size_t k_attr = data.attributes.empty() ? 0 : data.attributes.front().size();
  if (k_attr == 0) throw ConfigError("training set has no attributes");
  for (const auto& a : data.attributes) {
    if (a.size() != k_attr) throw ConfigError("training set attribute rows differ in length");
  }
  const DatasetIndex index(data.labels);
  if (uses_pairs(config.variant) && index.class_count() < 2) {
    throw ConfigError("variant " + to_string(config.variant) + " needs at least 2 classes");
  }

  const Rng root(config.seed);
  Rng init_rng(root.derive_seed(kInitStream));
  Rng sample_rng(root.derive_seed(kSamplingStream));

  TrainResult result;
  result.checkpoint.config_json = to_json(config);
  result.checkpoint.config_hash = fnv1a64(result.checkpoint.config_json);
  NetworkParams& params = result.checkpoint.params;
  params = init_params(config.shape_for(static_cast<std::size_t>(data.features.cols()), k_attr), init_rng);
  OptimizerState& opt = result.checkpoint.optimizer;
  opt = OptimizerState::for_params(params, AdamConfig{config.learning_rate});
  TrainingHistory& history = result.history;

  // attr_only on a single class: plain uniform batches, no pairs needed.
  const bool plain_batches = !uses_pairs(config.variant) && index.class_count() < 2;
  std::optional<ImageWiseSampler> image_sampler;
  std::size_t epoch_records = data.size();
  std::size_t batch_records = 0;
  if (config.sampling == SamplingMethod::image_wise && !plain_batches) {
    image_sampler.emplace(index, sample_rng);
    history.skipped_anchors = image_sampler->skipped_anchors();
    epoch_records = image_sampler->eligible_anchors();
    batch_records = config.n_anchors;
  } else if (plain_batches) {
    batch_records = config.sampling == SamplingMethod::image_wise ? 3 * config.n_anchors
                                                                   : config.n_classes * config.m_per_class;
  } else {
    // Expected records per batch-wise draw, counting truncated small classes.
    std::size_t taken = 0;
    for (const auto& [cls, members] : index.classes()) taken += std::min(config.m_per_class, members.size());
    const std::size_t n_classes = std::min(config.n_classes, index.class_count());
    batch_records = n_classes * taken / std::max<std::size_t>(1, index.class_count());
  }

  auto draw = [&]() -> Batch {
    Batch b;
    if (plain_batches) {
      std::vector<std::size_t> all(data.size());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      const std::size_t take =
          std::min(all.size(), config.sampling == SamplingMethod::image_wise ? 3 * config.n_anchors
                                                                             : config.n_classes * config.m_per_class);
      for (std::size_t i = 0; i < take; ++i) std::swap(all[i], all[i + sample_rng.uniform_index(all.size() - i)]);
      all.resize(take);
      b.slots = std::move(all);
      return b;
    }
    if (image_sampler) {
      const TripletBatch tb = image_sampler->next(config.n_anchors);
      b.slots = tb.slots();
      b.pairs = triplets_to_pairs(tb);
      return b;
    }
    const std::size_t n_classes = std::min(config.n_classes, index.class_count());
    for (int attempt = 0;; ++attempt) {
      b.slots = sample_batch_wise(index, n_classes, config.m_per_class, sample_rng);
      b.pairs = enumerate_pairs(slot_labels(data, b.slots));
      if (!uses_pairs(config.variant) || (!b.pairs.positives.empty() && !b.pairs.negatives.empty())) return b;
      if (attempt == kMaxResamples) {
        throw TrainingAborted("degenerate batch (no positive or no negative pairs) after " +
                                  std::to_string(kMaxResamples) + " resamples",
                              result);
      }
      ++history.resampled_batches;
    }
  };

  const std::size_t total_steps = config.epochs * steps_per_epoch(epoch_records, batch_records);
  std::vector<std::vector<std::uint8_t>> batch_attrs;
  for (std::size_t step = 1; step <= total_steps; ++step) {
    const Batch batch = draw();
    Matrix inputs(static_cast<Eigen::Index>(batch.slots.size()), data.features.cols());
    batch_attrs.clear();
    for (std::size_t r = 0; r < batch.slots.size(); ++r) {
      inputs.row(static_cast<Eigen::Index>(r)) = data.features.row(static_cast<Eigen::Index>(batch.slots[r]));
      batch_attrs.push_back(data.attributes[batch.slots[r]]);
    }
    BatchObjective obj = evaluate_batch(config, params, inputs, batch_attrs, batch.pairs);
    if (!std::isfinite(obj.total) || !obj.grads.all_finite()) {
      throw TrainingAborted("non-finite loss or gradient at step " + std::to_string(step), result);
    }
    adam_step(params, obj.grads, opt);
    history.steps.push_back({step, obj.metric, obj.attribute, obj.total, obj.n_pos, obj.n_neg});
  }
  return result;
}

}  // namespace sgml
