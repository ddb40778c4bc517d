#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sgml/matrix.hpp"
#include "sgml/network.hpp"

namespace sgml {

enum class FeatureLayer { emb, fc, trunk };

std::string to_string(FeatureLayer layer);
FeatureLayer feature_layer_from_string(const std::string& name);

enum class RetrievalMode {
  separate,       // queries and gallery are distinct sets
  leave_one_out,  // gallery is the query set; each query skips itself
};

/// Row-aligned features of one layer from a forward pass on frozen params.
Matrix extract_features(const NetworkParams& params, const Matrix& inputs, FeatureLayer layer);

/// Gallery rows ranked by cosine similarity to one query. Ties go to the
/// lower gallery index.
struct RetrievalResult {
  std::size_t query = 0;
  std::vector<std::size_t> gallery;
  std::vector<double> scores;
};

/// Top `k` gallery rows for query row `query`; `exclude` is skipped
/// (leave-one-out).
RetrievalResult retrieve(const Matrix& queries, std::size_t query, const Matrix& gallery,
                         std::size_t k, std::optional<std::size_t> exclude = std::nullopt);

struct RecallReport {
  std::string layer;
  std::map<std::size_t, double> recall;  // K -> Recall@K
  std::size_t query_count = 0;
  std::size_t excluded_queries = 0;  // leave-one-out queries with no other class member
};

/// Fraction of queries whose top-K gallery items contain a same-class item.
/// In leave_one_out mode `gallery`/`gallery_labels` must be the query set.
RecallReport recall_at_k(const Matrix& queries, const Matrix& gallery,
                         std::span<const int> query_labels, std::span<const int> gallery_labels,
                         std::span<const std::size_t> ks, RetrievalMode mode);

/// Inputs for evaluation. In leave_one_out mode only the query side is used.
struct EvalSplit {
  Matrix query_inputs;
  std::vector<int> query_labels;
  Matrix gallery_inputs;
  std::vector<int> gallery_labels;
  RetrievalMode mode = RetrievalMode::separate;
};

std::vector<RecallReport> evaluate_layers(const NetworkParams& params, const EvalSplit& split,
                                          std::span<const std::size_t> ks,
                                          std::span<const FeatureLayer> layers);

/// One report each for emb, fc and trunk.
std::vector<RecallReport> evaluate_all_layers(const NetworkParams& params, const EvalSplit& split,
                                              std::span<const std::size_t> ks);

std::string recall_csv(std::span<const RecallReport> reports);
std::string recall_table(std::span<const RecallReport> reports);

}  // namespace sgml
