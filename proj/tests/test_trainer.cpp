#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "sgml/errors.hpp"
#include "sgml/similarity.hpp"
#include "sgml/trainer.hpp"

using namespace sgml;

namespace {

TrainConfig tiny_config(Variant v) {
  TrainConfig c;
  c.variant = v;
  c.trunk_dims = {8};
  c.fc_dim = 8;
  c.emb_dim = 4;
  c.n_classes = 4;
  c.m_per_class = 3;
  c.n_anchors = 6;
  c.learning_rate = 1e-2;
  c.epochs = 5;
  return c;
}

TrainingSet synthetic_set(std::uint64_t seed, std::size_t classes, std::size_t per_class, std::size_t dim,
                          std::size_t k) {
  Rng rng(seed);
  TrainingSet set;
  set.features.resize(static_cast<Eigen::Index>(classes * per_class), static_cast<Eigen::Index>(dim));
  std::vector<std::vector<double>> centres(classes, std::vector<double>(dim));
  for (auto& c : centres) {
    for (auto& x : c) x = rng.normal();
  }
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<std::uint8_t> bits(k);
    for (auto& b : bits) b = rng.bernoulli(0.5) ? 1 : 0;
    for (std::size_t i = 0; i < per_class; ++i) {
      const auto row = static_cast<Eigen::Index>(c * per_class + i);
      for (std::size_t d = 0; d < dim; ++d) set.features(row, static_cast<Eigen::Index>(d)) = centres[c][d] + 0.3 * rng.normal();
      set.labels.push_back(static_cast<int>(c));
      set.attributes.push_back(bits);
    }
  }
  return set;
}

bool same_params(const NetworkParams& a, const NetworkParams& b) {
  bool eq = true;
  std::vector<const DenseLayer*> la, lb;
  a.for_each_layer([&](const DenseLayer& l) { la.push_back(&l); });
  b.for_each_layer([&](const DenseLayer& l) { lb.push_back(&l); });
  if (la.size() != lb.size()) return false;
  for (std::size_t i = 0; i < la.size(); ++i) eq = eq && la[i]->weight == lb[i]->weight && la[i]->bias == lb[i]->bias;
  return eq;
}

}  // namespace

TEST(PairSamples, IdenticalAndDisjointExamples) {
  Matrix emb(2, 2);
  emb << 1, 2, 1, 2;
  Matrix attrs(2, 3);
  attrs << 1, 0, 1, 1, 0, 1;
  PairList pl;
  pl.positives.push_back({0, 1});
  auto ps = build_pair_samples(emb, &attrs, pl);
  ASSERT_EQ(ps.size(), 1u);
  EXPECT_NEAR(ps[0].s, 1.0, 1e-15);
  EXPECT_NEAR(ps[0].g, 1.0, 1e-15);

  emb << 1, 0, 0, 1;
  attrs << 1, 0, 0, 0, 1, 1;
  pl = {};
  pl.negatives.push_back({0, 1});
  ps = build_pair_samples(emb, &attrs, pl);
  EXPECT_EQ(ps[0].s, 0.0);
  EXPECT_EQ(ps[0].g, 0.0);
  EXPECT_EQ(ps[0].polarity, Polarity::negative);
}

TEST(PairSamples, MatchKernelPairByPair) {
  Rng rng(1);
  Matrix emb(10, 5), probs(10, 7);
  for (Eigen::Index i = 0; i < 10; ++i) {
    for (Eigen::Index j = 0; j < 5; ++j) emb(i, j) = rng.normal();
    for (Eigen::Index j = 0; j < 7; ++j) probs(i, j) = rng.uniform(1e-7, 1.0);
  }
  std::vector<int> labels{0, 0, 1, 1, 2, 2, 0, 1, 2, 3};
  const PairList pl = enumerate_pairs(labels);
  const auto ps = build_pair_samples(emb, &probs, pl);
  ASSERT_EQ(ps.size(), pl.positives.size() + pl.negatives.size());
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const bool pos = i < pl.positives.size();
    const IndexPair ip = pos ? pl.positives[i] : pl.negatives[i - pl.positives.size()];
    const auto a = static_cast<Eigen::Index>(ip.first), b = static_cast<Eigen::Index>(ip.second);
    EXPECT_EQ(ps[i].s, cosine_similarity(row_span(emb, a), row_span(emb, b)));
    EXPECT_EQ(ps[i].g, sgs_mapping(row_span(probs, a), row_span(probs, b)));
    EXPECT_EQ(ps[i].polarity, pos ? Polarity::positive : Polarity::negative);
    EXPECT_GE(ps[i].s, -1.0);
    EXPECT_LE(ps[i].s, 1.0);
    EXPECT_GE(ps[i].g, 0.0);
    EXPECT_LE(ps[i].g, 1.0);
  }
}

TEST(PairSamples, ZeroEmbeddingIsNudged) {
  Matrix emb(2, 2);
  emb << 0, 0, 1, 0;
  PairList pl;
  pl.positives.push_back({0, 1});
  const auto ps = build_pair_samples(emb, nullptr, pl);
  EXPECT_NEAR(ps[0].s, 1.0, 1e-12);
  EXPECT_EQ(ps[0].g, 0.0);
}

TEST(EvaluateBatch, IdenticalAttributesSaturateGranularity) {
  TrainConfig c = tiny_config(Variant::sgml);
  c.sgs_source = SgsSource::ground_truth;
  const TrainingSet set = synthetic_set(2, 3, 2, 5, 6);
  Rng rng(3);
  const NetworkParams p = init_params(c.shape_for(5, 6), rng);
  std::vector<std::vector<std::uint8_t>> same(set.size(), std::vector<std::uint8_t>{1, 0, 1, 1, 0, 0});
  const PairList pl = enumerate_pairs(set.labels);
  const BatchObjective obj = evaluate_batch(c, p, set.features, same, pl);
  const ForwardOutput out = forward(p, set.features);
  auto pairs = build_pair_samples(out.embeddings, nullptr, pl);
  for (auto& ps : pairs) ps.g = 1.0;
  EXPECT_NEAR(obj.metric, sbdl_batch(pairs, c.loss).value, 1e-14);
  // Band ceiling: the positive term is BDL evaluated at s + 1.
  double pos = 0.0;
  for (const auto& ps : pairs) {
    if (ps.polarity == Polarity::positive) pos += bdl(ps.s + 1.0, Polarity::positive, c.loss).value;
  }
  EXPECT_NEAR(sbdl_batch(pairs, c.loss).positive_term, pos / static_cast<double>(pl.positives.size()), 1e-14);
}

TEST(EvaluateBatch, PairCountsAndVariantTotals) {
  const TrainingSet set = synthetic_set(4, 3, 3, 5, 6);
  Rng rng(5);
  const PairList pl = enumerate_pairs(set.labels);
  for (Variant v : {Variant::metric_only, Variant::attr_only, Variant::multitask, Variant::sgml}) {
    const TrainConfig c = tiny_config(v);
    const NetworkParams p = init_params(c.shape_for(5, 6), rng);
    const BatchObjective obj = evaluate_batch(c, p, set.features, set.attributes, pl);
    if (v == Variant::metric_only) {
      EXPECT_EQ(obj.total, obj.metric);
      EXPECT_EQ(obj.attribute, 0.0);
    } else if (v == Variant::attr_only) {
      EXPECT_EQ(obj.total, obj.attribute);
    } else {
      EXPECT_NEAR(obj.total, obj.metric + c.loss.lambda * obj.attribute, 1e-14);
    }
    if (v != Variant::attr_only) {
      EXPECT_EQ(obj.n_pos, 9u);
      EXPECT_EQ(obj.n_neg, 27u);
    }
  }
}

TEST(Train, SameSeedIsBitIdentical) {
  const TrainingSet set = synthetic_set(6, 5, 4, 6, 8);
  for (SamplingMethod m : {SamplingMethod::image_wise, SamplingMethod::batch_wise}) {
    TrainConfig c = tiny_config(Variant::sgml);
    c.sampling = m;
    c.seed = 17;
    const TrainResult a = train(c, set);
    const TrainResult b = train(c, set);
    EXPECT_EQ(a.history.to_csv(), b.history.to_csv());
    EXPECT_TRUE(same_params(a.checkpoint.params, b.checkpoint.params));
    EXPECT_EQ(checkpoint_to_json(a.checkpoint), checkpoint_to_json(b.checkpoint));
  }
}

TEST(Train, MultitaskWithZeroLambdaMatchesMetricOnly) {
  const TrainingSet set = synthetic_set(7, 5, 4, 6, 8);
  TrainConfig mt = tiny_config(Variant::multitask);
  mt.loss.lambda = 0.0;
  TrainConfig mo = tiny_config(Variant::metric_only);
  mo.loss.lambda = 0.0;
  const TrainResult a = train(mt, set);
  const TrainResult b = train(mo, set);
  ASSERT_EQ(a.history.steps.size(), b.history.steps.size());
  for (std::size_t i = 0; i < a.history.steps.size(); ++i) {
    EXPECT_EQ(a.history.steps[i].metric_loss, b.history.steps[i].metric_loss);
  }
  EXPECT_TRUE(same_params(a.checkpoint.params, b.checkpoint.params));
}

TEST(Train, ZeroGranularityChainCoincides) {
  // One-hot attributes unique to each record force g = 0 on every pair.
  TrainingSet set = synthetic_set(8, 4, 3, 6, 12);
  for (std::size_t r = 0; r < set.size(); ++r) {
    set.attributes[r].assign(12, 0);
    set.attributes[r][r] = 1;
  }
  std::vector<TrainResult> runs;
  for (Variant v : {Variant::sgml, Variant::multitask, Variant::metric_only}) {
    TrainConfig c = tiny_config(v);
    c.loss.lambda = 0.0;
    c.sgs_source = SgsSource::ground_truth;
    runs.push_back(train(c, set));
  }
  for (std::size_t r = 1; r < runs.size(); ++r) {
    ASSERT_EQ(runs[r].history.steps.size(), runs[0].history.steps.size());
    for (std::size_t i = 0; i < runs[0].history.steps.size(); ++i) {
      EXPECT_EQ(runs[r].history.steps[i].metric_loss, runs[0].history.steps[i].metric_loss);
    }
    EXPECT_TRUE(same_params(runs[r].checkpoint.params, runs[0].checkpoint.params));
  }
}

TEST(Train, SeparableSetLossDecreases) {
  int decreased = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    TrainingSet set;
    set.features.resize(8, 2);
    for (int i = 0; i < 8; ++i) {
      const double side = i < 4 ? 1.0 : -1.0;
      set.features(i, 0) = side * (1.0 + rng.uniform(0, 0.5));
      set.features(i, 1) = rng.uniform(-0.5, 0.5);
      set.labels.push_back(i < 4 ? 0 : 1);
      set.attributes.push_back({static_cast<std::uint8_t>(i < 4), static_cast<std::uint8_t>(i >= 4)});
    }
    TrainConfig c = tiny_config(Variant::metric_only);
    c.n_classes = 2;
    c.m_per_class = 4;
    c.epochs = 200;  // one 8-record batch per epoch
    c.seed = seed;
    const TrainResult r = train(c, set);
    ASSERT_EQ(r.history.steps.size(), 200u);
    decreased += r.history.steps.back().metric_loss < r.history.steps.front().metric_loss;
  }
  EXPECT_EQ(decreased, 5);
}

TEST(Train, HistoryPairCounts) {
  const TrainingSet set = synthetic_set(9, 6, 4, 6, 8);
  TrainConfig c = tiny_config(Variant::multitask);
  c.n_classes = 3;
  c.m_per_class = 4;
  const TrainResult bw = train(c, set);
  for (const auto& s : bw.history.steps) {
    EXPECT_EQ(s.n_pos + s.n_neg, 12u * 11u / 2u);
    EXPECT_EQ(s.n_pos, 18u);
  }
  c.sampling = SamplingMethod::image_wise;
  const TrainResult iw = train(c, set);
  for (const auto& s : iw.history.steps) {
    EXPECT_EQ(s.n_pos, c.n_anchors);
    EXPECT_EQ(s.n_neg, c.n_anchors);
  }
}

TEST(Train, MetricOnlyHistoryHasZeroAttributeLoss) {
  const TrainingSet set = synthetic_set(10, 4, 3, 6, 8);
  const TrainResult r = train(tiny_config(Variant::metric_only), set);
  for (const auto& s : r.history.steps) EXPECT_EQ(s.attribute_loss, 0.0);
  EXPECT_EQ(r.history.to_csv().substr(0, r.history.to_csv().find('\n')),
            "step,metric_loss,attribute_loss,total_loss,n_pos,n_neg");
}

TEST(Train, SingleClassNeedsAttrOnly) {
  const TrainingSet set = synthetic_set(11, 1, 6, 6, 8);
  EXPECT_THROW(train(tiny_config(Variant::metric_only), set), std::exception);
  const TrainResult r = train(tiny_config(Variant::attr_only), set);
  EXPECT_FALSE(r.history.steps.empty());
  EXPECT_LT(r.history.steps.back().attribute_loss, r.history.steps.front().attribute_loss);
}

TEST(TrainConfigJson, RoundTripAndUnknownKeys) {
  TrainConfig c = tiny_config(Variant::attr_only);
  c.loss.alpha = 2.7;
  c.loss.beta = 0.1;
  c.sgs_backprop = true;
  c.sgs_source = SgsSource::ground_truth;
  c.sampling = SamplingMethod::image_wise;
  const std::string j = to_json(c);
  EXPECT_EQ(to_json(train_config_from_json(j)), j);
  EXPECT_EQ(train_config_from_json(R"({"epochs": 3})", c).epochs, 3u);
  EXPECT_EQ(train_config_from_json(R"({"epochs": 3})", c).loss.alpha, 2.7);
  EXPECT_THROW(train_config_from_json(R"({"epoch": 3})"), ParseError);
  EXPECT_THROW(train_config_from_json(R"({"variant": "nope"})"), std::exception);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.learning_rate = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.n_classes = 1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(StepsPerEpoch, RoundsUp) {
  EXPECT_EQ(steps_per_epoch(600, 164), 4u);
  EXPECT_EQ(steps_per_epoch(120, 60), 2u);
  EXPECT_EQ(steps_per_epoch(10, 100), 1u);
}
