#include "sgml/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>

#include "sgml/losses.hpp"
#include "sgml/rng.hpp"
#include "sgml/similarity.hpp"
#include "sgml/trainer.hpp"

namespace sgml {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

bool GradCheckReport::passed() const {
  return !entries.empty() &&
         std::all_of(entries.begin(), entries.end(), [](const GradCheckEntry& e) { return e.passed; });
}

std::string GradCheckReport::to_text() const {
  std::string out;
  char buf[256];
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof buf, "%-4s %-34s cases=%-5zu derivs=%-7zu max_rel_err=%.3e\n",
                  e.passed ? "PASS" : "FAIL", e.name.c_str(), e.cases, e.derivatives, e.max_rel_error);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "%s (tolerance %.1e)\n", passed() ? "all checks passed" : "gradient check FAILED",
                tolerance);
  out += buf;
  return out;
}

namespace {

struct Accumulator {
  GradCheckEntry entry;
  double floor = kScalarGradCheckFloor;

  void add(double analytic, double numeric) {
    entry.max_rel_error = std::max(entry.max_rel_error, relative_error(analytic, numeric, floor));
    entry.derivatives += 1;
  }

  GradCheckEntry finish(double tolerance) {
    entry.passed = entry.derivatives > 0 && entry.max_rel_error < tolerance;
    return entry;
  }
};

double central(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

LossParams random_params(Rng& rng) {
  LossParams p;
  p.alpha = rng.uniform(0.5, 5.0);
  p.beta = rng.uniform(-1.0, 1.0);
  p.cost_pos = rng.uniform(0.5, 2.0);
  p.cost_neg = rng.uniform(0.5, 2.0);
  p.lambda = rng.uniform(0.0, 2.0);
  return p;
}

}  // namespace

GradCheckReport run_scalar_gradcheck(const GradCheckOptions& o) {
  Rng rng(Rng(o.seed).derive_seed(11));
  const double h = o.step;
  const double flip = o.inject_sign_flip ? -1.0 : 1.0;
  Accumulator bdl_pos{{"bdl(positive) d/ds"}}, bdl_neg{{"bdl(negative) d/ds"}};
  Accumulator pos_s{{"sbdl_positive d/ds"}}, pos_g{{"sbdl_positive d/dg"}};
  Accumulator neg_s{{"sbdl_negative d/ds"}}, neg_g{{"sbdl_negative d/dg"}};
  Accumulator bce_acc{{"bce d/dp"}}, cos_acc{{"cosine_similarity d/du"}};
  Accumulator batch_acc{{"sbdl_batch d/ds, d/dg"}}, obj_acc{{"sgml_objective d/dp"}};

  for (std::size_t c = 0; c < o.scalar_cases; ++c) {
    const LossParams p = random_params(rng);
    const double s = rng.uniform(-1.0, 1.0);
    const double g = rng.uniform(0.0, 1.0);

    bdl_pos.add(bdl(s, Polarity::positive, p).d_ds,
                central([&](double x) { return bdl(x, Polarity::positive, p).value; }, s, h));
    bdl_neg.add(bdl(s, Polarity::negative, p).d_ds,
                central([&](double x) { return bdl(x, Polarity::negative, p).value; }, s, h));

    const LossValue lp = sbdl_positive(s, g, p);
    pos_s.add(flip * lp.d_ds, central([&](double x) { return sbdl_positive(x, g, p).value; }, s, h));
    pos_g.add(lp.d_dg, central([&](double x) { return sbdl_positive(s, x, p).value; }, g, h));
    const LossValue ln = sbdl_negative(s, g, p);
    neg_s.add(ln.d_ds, central([&](double x) { return sbdl_negative(x, g, p).value; }, s, h));
    neg_g.add(ln.d_dg, central([&](double x) { return sbdl_negative(s, x, p).value; }, g, h));

    // BCE away from the clamp.
    const std::size_t k = 1 + rng.uniform_index(6);
    std::vector<double> probs(k);
    std::vector<std::uint8_t> labels(k);
    for (std::size_t i = 0; i < k; ++i) {
      probs[i] = rng.uniform(0.05, 0.95);
      labels[i] = rng.bernoulli(0.5) ? 1 : 0;
    }
    const AttributeLoss al = bce(probs, labels);
    for (std::size_t i = 0; i < k; ++i) {
      bce_acc.add(al.d_dp[i], central(
                                  [&](double x) {
                                    auto q = probs;
                                    q[i] = x;
                                    return bce(q, labels).value;
                                  },
                                  probs[i], h));
    }

    // Cosine Jacobian.
    const std::size_t d = 2 + rng.uniform_index(6);
    std::vector<double> u(d), v(d), grad(d);
    for (std::size_t i = 0; i < d; ++i) {
      u[i] = rng.normal();
      v[i] = rng.normal();
    }
    cosine_gradient(u, v, grad);
    for (std::size_t i = 0; i < d; ++i) {
      cos_acc.add(grad[i], central(
                               [&](double x) {
                                 auto w = u;
                                 w[i] = x;
                                 return cosine_similarity(w, v);
                               },
                               u[i], h));
    }

    // Batch reduction: a few positives and negatives, derivative per pair.
    if (c % 10 == 0) {
      std::vector<PairSample> pairs;
      const std::size_t n = 2 + rng.uniform_index(5);
      for (std::size_t i = 0; i < n; ++i) {
        pairs.push_back({rng.uniform(-1.0, 1.0), rng.uniform(0.0, 1.0),
                         i % 2 == 0 ? Polarity::positive : Polarity::negative});
      }
      const PairBatchLoss bl = sbdl_batch(pairs, p);
      for (std::size_t i = 0; i < n; ++i) {
        batch_acc.add(bl.d_ds[i], central(
                                      [&](double x) {
                                        auto q = pairs;
                                        q[i].s = x;
                                        return sbdl_batch(q, p).value;
                                      },
                                      pairs[i].s, h));
        batch_acc.add(bl.d_dg[i], central(
                                      [&](double x) {
                                        auto q = pairs;
                                        q[i].g = x;
                                        return sbdl_batch(q, p).value;
                                      },
                                      pairs[i].g, h));
      }
      // Joint objective, derivative in each attribute probability.
      std::vector<std::vector<double>> term_probs(2, std::vector<double>(3));
      std::vector<std::vector<std::uint8_t>> term_labels(2, std::vector<std::uint8_t>(3));
      for (auto& tp : term_probs) {
        for (auto& x : tp) x = rng.uniform(0.05, 0.95);
      }
      for (auto& tl : term_labels) {
        for (auto& x : tl) x = rng.bernoulli(0.5) ? 1 : 0;
      }
      auto objective = [&](const std::vector<std::vector<double>>& tps) {
        std::vector<AttributeTerm> terms;
        for (std::size_t t = 0; t < tps.size(); ++t) terms.push_back({tps[t], term_labels[t]});
        return sgml_objective(pairs, terms, p);
      };
      const ObjectiveValue ov = objective(term_probs);
      for (std::size_t t = 0; t < 2; ++t) {
        for (std::size_t i = 0; i < 3; ++i) {
          obj_acc.add(ov.d_dprobs[t][i], central(
                                             [&](double x) {
                                               auto q = term_probs;
                                               q[t][i] = x;
                                               return objective(q).value;
                                             },
                                             term_probs[t][i], h));
        }
      }
    }
  }

  GradCheckReport report;
  report.tolerance = o.tolerance;
  for (Accumulator* a : {&bdl_pos, &bdl_neg, &pos_s, &pos_g, &neg_s, &neg_g, &bce_acc, &cos_acc, &batch_acc, &obj_acc}) {
    a->entry.cases = o.scalar_cases;
    report.entries.push_back(a->finish(o.tolerance));
  }
  return report;
}

namespace {

struct NetworkCase {
  TrainConfig config;
  NetworkParams params;
  Matrix inputs;
  std::vector<std::vector<std::uint8_t>> attributes;
  PairList pairs;
};

NetworkCase random_network_case(Rng& rng, Variant variant, SgsSource source, bool backprop) {
  NetworkCase nc;
  const std::size_t input_dim = 2 + rng.uniform_index(7);  // <= 8
  const std::size_t depth = rng.uniform_index(3);
  nc.config.trunk_dims.clear();
  for (std::size_t i = 0; i < depth; ++i) nc.config.trunk_dims.push_back(2 + rng.uniform_index(15));
  nc.config.fc_dim = 2 + rng.uniform_index(15);
  nc.config.emb_dim = 2 + rng.uniform_index(15);
  const std::size_t k = 2 + rng.uniform_index(7);
  nc.config.variant = variant;
  nc.config.sgs_source = source;
  nc.config.sgs_backprop = backprop;
  nc.config.loss = random_params(rng);
  nc.config.loss.lambda = rng.uniform(0.2, 2.0);

  Rng init(rng.next_u64());
  nc.params = init_params(nc.config.shape_for(input_dim, k), init);
  nc.params.for_each_layer([&](DenseLayer& l) {
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = rng.uniform(-0.1, 0.1);
  });

  const std::size_t n = 4 + rng.uniform_index(5);  // <= 8
  nc.inputs.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(input_dim));
  for (Eigen::Index r = 0; r < nc.inputs.rows(); ++r) {
    for (Eigen::Index c = 0; c < nc.inputs.cols(); ++c) nc.inputs(r, c) = rng.normal();
  }
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i < 2 ? 0 : (i < 3 ? 1 : static_cast<int>(rng.uniform_index(3)));
  nc.pairs = enumerate_pairs(labels);
  nc.attributes.assign(n, std::vector<std::uint8_t>(k));
  for (auto& row : nc.attributes) {
    for (auto& bit : row) bit = rng.bernoulli(0.5) ? 1 : 0;
    row[0] = 1;  // ground-truth SGS needs a nonzero vector
  }
  return nc;
}

void check_network_case(const NetworkCase& nc, double h, double flip, Accumulator& acc) {
  const BatchObjective base = evaluate_batch(nc.config, nc.params, nc.inputs, nc.attributes, nc.pairs);
  NetworkParams probe = nc.params;
  auto total_at = [&]() { return evaluate_batch(nc.config, probe, nc.inputs, nc.attributes, nc.pairs).total; };

  std::vector<DenseLayer*> probe_layers;
  probe.for_each_layer([&](DenseLayer& l) { probe_layers.push_back(&l); });
  std::vector<const DenseLayer*> grad_layers;
  base.grads.for_each_layer([&](const DenseLayer& l) { grad_layers.push_back(&l); });

  auto check = [&](double& param, double analytic) {
    const double saved = param;
    param = saved + h;
    const double up = total_at();
    param = saved - h;
    const double down = total_at();
    param = saved;
    acc.add(flip * analytic, (up - down) / (2.0 * h));
  };
  for (std::size_t li = 0; li < probe_layers.size(); ++li) {
    DenseLayer& l = *probe_layers[li];
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) check(l.weight(r, c), grad_layers[li]->weight(r, c));
    }
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) check(l.bias[i], grad_layers[li]->bias[i]);
  }
}

}  // namespace

GradCheckReport run_network_gradcheck(const GradCheckOptions& o) {
  struct Family {
    const char* name;
    Variant variant;
    SgsSource source;
    bool backprop;
  };
  const Family families[] = {
      {"network metric_only", Variant::metric_only, SgsSource::predicted, false},
      {"network attr_only", Variant::attr_only, SgsSource::predicted, false},
      {"network multitask", Variant::multitask, SgsSource::predicted, false},
      {"network sgml (predicted SGS, coupled)", Variant::sgml, SgsSource::predicted, true},
      {"network sgml (ground-truth SGS)", Variant::sgml, SgsSource::ground_truth, false},
  };
  GradCheckReport report;
  report.tolerance = o.tolerance;
  std::uint64_t stream = 100;
  for (const auto& f : families) {
    Rng rng(Rng(o.seed).derive_seed(stream++));
    Accumulator acc{{f.name}, kNetworkGradCheckFloor};
    for (std::size_t c = 0; c < o.network_cases; ++c) {
      const NetworkCase nc = random_network_case(rng, f.variant, f.source, f.backprop);
      check_network_case(nc, o.step, o.inject_sign_flip && c == 0 ? -1.0 : 1.0, acc);
    }
    acc.entry.cases = o.network_cases;
    report.entries.push_back(acc.finish(o.tolerance));
  }
  return report;
}

GradCheckReport run_gradcheck(const GradCheckOptions& o) {
  GradCheckReport report = run_scalar_gradcheck(o);
  GradCheckReport net = run_network_gradcheck(o);
  report.entries.insert(report.entries.end(), net.entries.begin(), net.entries.end());
  return report;
}

}  // namespace sgml
