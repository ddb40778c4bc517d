#include "sgml/evaluator.hpp"

#include <algorithm>
#include <limits>
#include <cstdio>
#include <numeric>

#include "sgml/dataset.hpp"
#include "sgml/errors.hpp"
#include "sgml/similarity.hpp"

namespace sgml {

std::string to_string(FeatureLayer layer) {
  switch (layer) {
    case FeatureLayer::emb:
      return "emb";
    case FeatureLayer::fc:
      return "fc";
    case FeatureLayer::trunk:
      return "trunk";
  }
  return "?";
}

FeatureLayer feature_layer_from_string(const std::string& name) {
  if (name == "emb") return FeatureLayer::emb;
  if (name == "fc") return FeatureLayer::fc;
  if (name == "trunk") return FeatureLayer::trunk;
  throw ConfigError("unknown feature layer '" + name + "' (expected emb, fc or trunk)");
}

Matrix extract_features(const NetworkParams& params, const Matrix& inputs, FeatureLayer layer) {
  ForwardOutput out = forward(params, inputs);
  switch (layer) {
    case FeatureLayer::emb:
      return std::move(out.embeddings);
    case FeatureLayer::fc:
      return std::move(out.fc_out);
    case FeatureLayer::trunk:
      return std::move(out.trunk_out);
  }
  return {};
}

namespace {

std::vector<double> score_row(const Matrix& queries, std::size_t q, const Matrix& gallery) {
  std::vector<double> scores(static_cast<std::size_t>(gallery.rows()));
  const auto qs = row_span(queries, static_cast<Eigen::Index>(q));
  for (Eigen::Index g = 0; g < gallery.rows(); ++g) {
    scores[static_cast<std::size_t>(g)] = cosine_similarity(qs, row_span(gallery, g));
  }
  return scores;
}

}  // namespace

RetrievalResult retrieve(const Matrix& queries, std::size_t query, const Matrix& gallery,
                         std::size_t k, std::optional<std::size_t> exclude) {
  if (queries.cols() != gallery.cols()) throw DomainError("retrieve: query/gallery width mismatch");
  const Matrix qn = nudge_zero_rows(queries.row(static_cast<Eigen::Index>(query)));
  const Matrix gn = nudge_zero_rows(gallery);
  const auto scores = score_row(qn, 0, gn);
  std::vector<std::size_t> order;
  order.reserve(scores.size());
  for (std::size_t g = 0; g < scores.size(); ++g) {
    if (!exclude || *exclude != g) order.push_back(g);
  }
  const std::size_t take = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
                    });
  RetrievalResult out;
  out.query = query;
  for (std::size_t i = 0; i < take; ++i) {
    out.gallery.push_back(order[i]);
    out.scores.push_back(scores[order[i]]);
  }
  return out;
}

RecallReport recall_at_k(const Matrix& queries, const Matrix& gallery,
                         std::span<const int> query_labels, std::span<const int> gallery_labels,
                         std::span<const std::size_t> ks, RetrievalMode mode) {
  if (ks.empty()) throw DomainError("recall_at_k: no K values");
  for (std::size_t k : ks) {
    if (k == 0) throw DomainError("recall_at_k: K must be >= 1");
  }
  if (queries.rows() == 0 || gallery.rows() == 0) throw DomainError("recall_at_k: empty query or gallery set");
  if (static_cast<std::size_t>(queries.rows()) != query_labels.size() ||
      static_cast<std::size_t>(gallery.rows()) != gallery_labels.size()) {
    throw DomainError("recall_at_k: label count does not match rows");
  }
  if (queries.cols() != gallery.cols()) throw DomainError("recall_at_k: query/gallery width mismatch");
  const bool loo = mode == RetrievalMode::leave_one_out;
  if (loo && queries.rows() != gallery.rows()) {
    throw DomainError("recall_at_k: leave-one-out needs the gallery to be the query set");
  }

  const Matrix qn = nudge_zero_rows(queries);
  const Matrix gn = nudge_zero_rows(gallery);

  // For each query: the rank of its best same-class gallery item under
  // (score desc, index asc). A hit at K means that rank < K.
  std::vector<std::size_t> best_rank;
  RecallReport report;
  for (std::size_t q = 0; q < query_labels.size(); ++q) {
    const auto scores = score_row(qn, q, gn);
    std::optional<std::size_t> best;
    for (std::size_t g = 0; g < scores.size(); ++g) {
      if ((loo && g == q) || gallery_labels[g] != query_labels[q]) continue;
      if (!best || scores[g] > scores[*best]) best = g;
    }
    if (!best) {
      if (loo) {
        ++report.excluded_queries;
        continue;
      }
      best_rank.push_back(std::numeric_limits<std::size_t>::max());
      continue;
    }
    std::size_t rank = 0;
    for (std::size_t g = 0; g < scores.size(); ++g) {
      if (loo && g == q) continue;
      if (scores[g] > scores[*best] || (scores[g] == scores[*best] && g < *best)) ++rank;
    }
    best_rank.push_back(rank);
  }
  report.query_count = best_rank.size();
  for (std::size_t k : ks) {
    if (best_rank.empty()) {
      report.recall[k] = 0.0;
      continue;
    }
    const auto hits = std::count_if(best_rank.begin(), best_rank.end(), [&](std::size_t r) { return r < k; });
    report.recall[k] = static_cast<double>(hits) / static_cast<double>(best_rank.size());
  }
  return report;
}

std::vector<RecallReport> evaluate_layers(const NetworkParams& params, const EvalSplit& split,
                                          std::span<const std::size_t> ks,
                                          std::span<const FeatureLayer> layers) {
  const bool loo = split.mode == RetrievalMode::leave_one_out;
  const ForwardOutput q_out = forward(params, split.query_inputs);
  std::optional<ForwardOutput> g_out;
  if (!loo) g_out = forward(params, split.gallery_inputs);
  auto pick = [](const ForwardOutput& o, FeatureLayer layer) -> const Matrix& {
    switch (layer) {
      case FeatureLayer::emb:
        return o.embeddings;
      case FeatureLayer::fc:
        return o.fc_out;
      case FeatureLayer::trunk:
        return o.trunk_out;
    }
    return o.embeddings;
  };
  std::vector<RecallReport> out;
  for (FeatureLayer layer : layers) {
    const Matrix& q = pick(q_out, layer);
    const Matrix& g = loo ? q : pick(*g_out, layer);
    const auto& g_labels = loo ? split.query_labels : split.gallery_labels;
    RecallReport r = recall_at_k(q, g, split.query_labels, g_labels, ks, split.mode);
    r.layer = to_string(layer);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<RecallReport> evaluate_all_layers(const NetworkParams& params, const EvalSplit& split,
                                              std::span<const std::size_t> ks) {
  constexpr FeatureLayer kLayers[] = {FeatureLayer::emb, FeatureLayer::fc, FeatureLayer::trunk};
  return evaluate_layers(params, split, ks, kLayers);
}

std::string recall_csv(std::span<const RecallReport> reports) {
  std::string out = "layer,k,recall,queries,excluded_queries\n";
  for (const auto& r : reports) {
    for (const auto& [k, v] : r.recall) {
      out += r.layer + "," + std::to_string(k) + "," + format_real(v) + "," +
             std::to_string(r.query_count) + "," + std::to_string(r.excluded_queries) + "\n";
    }
  }
  return out;
}

std::string recall_table(std::span<const RecallReport> reports) {
  if (reports.empty()) return {};
  char buf[64];
  std::string out = "layer  ";
  for (const auto& [k, _] : reports.front().recall) {
    std::snprintf(buf, sizeof buf, " %8s", ("R@" + std::to_string(k)).c_str());
    out += buf;
  }
  out += "   queries\n";
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%-7s", r.layer.c_str());
    out += buf;
    for (const auto& [k, v] : r.recall) {
      std::snprintf(buf, sizeof buf, " %8.4f", v);
      out += buf;
    }
    std::snprintf(buf, sizeof buf, " %9zu\n", r.query_count);
    out += buf;
  }
  return out;
}

}  // namespace sgml
