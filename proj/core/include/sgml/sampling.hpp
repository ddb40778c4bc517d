#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "sgml/rng.hpp"

namespace sgml {

/// Class membership of a set of records (indices into some record list).
class DatasetIndex {
 public:
  DatasetIndex() = default;
  /// labels[i] is the class of record i.
  explicit DatasetIndex(std::span<const int> labels);

  const std::map<int, std::vector<std::size_t>>& classes() const { return class_to_records_; }
  const std::vector<std::size_t>& records_of(int class_id) const;
  int class_of(std::size_t record) const { return labels_.at(record); }
  std::size_t size() const { return labels_.size(); }
  std::size_t class_count() const { return class_to_records_.size(); }

 private:
  std::vector<int> labels_;
  std::map<int, std::vector<std::size_t>> class_to_records_;
};

struct Triplet {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;
};

struct TripletBatch {
  std::vector<Triplet> triplets;

  /// Record slots in forward order: a0, p0, n0, a1, p1, n1, ...
  std::vector<std::size_t> slots() const;
};

struct IndexPair {
  std::size_t first = 0;
  std::size_t second = 0;
};

/// Positive (same-class) and negative (cross-class) pairs, expressed as
/// positions into the batch the pairs were built from.
struct PairList {
  std::vector<IndexPair> positives;
  std::vector<IndexPair> negatives;
};

/// One image-wise batch: `n_anchors` distinct anchors drawn uniformly, each
/// completed with a positive from its class and a negative from any other
/// class. Anchors whose class has a single record are never drawn.
TripletBatch sample_image_wise(const DatasetIndex& index, std::size_t n_anchors, Rng& rng);

/// Epoch-style image-wise sampler: every eligible record serves as anchor
/// exactly once per epoch, in a freshly shuffled order each epoch.
class ImageWiseSampler {
 public:
  ImageWiseSampler(const DatasetIndex& index, Rng& rng);

  TripletBatch next(std::size_t n_anchors);

  /// Records skipped as anchors because their class has one record.
  std::size_t skipped_anchors() const { return skipped_; }
  std::size_t eligible_anchors() const { return eligible_.size(); }

 private:
  const DatasetIndex* index_;
  Rng* rng_;
  std::vector<std::size_t> eligible_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t skipped_ = 0;
};

/// Picks `n_classes` distinct classes uniformly and up to `m_per_class`
/// records from each (all of them when the class is smaller).
std::vector<std::size_t> sample_batch_wise(const DatasetIndex& index, std::size_t n_classes,
                                           std::size_t m_per_class, Rng& rng);

/// Every unordered pair (i < j) of positions in `class_ids`, split by
/// whether the two positions share a class.
PairList enumerate_pairs(std::span<const int> class_ids);

/// One positive (a, p) and one negative (a, n) per triplet, as positions
/// into TripletBatch::slots().
PairList triplets_to_pairs(const TripletBatch& batch);

}  // namespace sgml
