#include "sgml/sampling.hpp"

#include <algorithm>
#include <string>

#include "sgml/errors.hpp"

namespace sgml {

DatasetIndex::DatasetIndex(std::span<const int> labels) : labels_(labels.begin(), labels.end()) {
  for (std::size_t i = 0; i < labels_.size(); ++i) class_to_records_[labels_[i]].push_back(i);
}

const std::vector<std::size_t>& DatasetIndex::records_of(int class_id) const {
  const auto it = class_to_records_.find(class_id);
  if (it == class_to_records_.end()) throw ConfigError("unknown class " + std::to_string(class_id));
  return it->second;
}

std::vector<std::size_t> TripletBatch::slots() const {
  std::vector<std::size_t> out;
  out.reserve(triplets.size() * 3);
  for (const auto& t : triplets) {
    out.push_back(t.anchor);
    out.push_back(t.positive);
    out.push_back(t.negative);
  }
  return out;
}

namespace {

void require_two_classes(const DatasetIndex& index) {
  if (index.class_count() < 2) {
    throw ConfigError("image-wise sampling needs at least 2 classes, got " +
                      std::to_string(index.class_count()));
  }
}

Triplet complete_triplet(const DatasetIndex& index, std::size_t anchor, Rng& rng) {
  const int cls = index.class_of(anchor);
  const auto& same = index.records_of(cls);
  // Uniform over the class minus the anchor.
  std::size_t pick = rng.uniform_index(same.size() - 1);
  std::size_t positive = same[pick];
  if (positive == anchor) positive = same.back();
  // Rejection keeps the negative uniform over the union of other classes.
  std::size_t negative = 0;
  do {
    negative = rng.uniform_index(index.size());
  } while (index.class_of(negative) == cls);
  return {anchor, positive, negative};
}

std::vector<std::size_t> collect_eligible(const DatasetIndex& index) {
  std::vector<std::size_t> out;
  for (const auto& [cls, records] : index.classes()) {
    if (records.size() >= 2) out.insert(out.end(), records.begin(), records.end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TripletBatch sample_image_wise(const DatasetIndex& index, std::size_t n_anchors, Rng& rng) {
  require_two_classes(index);
  if (n_anchors == 0) throw ConfigError("n_anchors must be >= 1");
  std::vector<std::size_t> pool = collect_eligible(index);
  if (pool.empty()) throw ConfigError("no class has 2 or more records");
  const std::size_t take = std::min(n_anchors, pool.size());
  // Partial Fisher-Yates: the first `take` entries become the anchors.
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = i + rng.uniform_index(pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
  TripletBatch batch;
  batch.triplets.reserve(take);
  for (std::size_t i = 0; i < take; ++i) batch.triplets.push_back(complete_triplet(index, pool[i], rng));
  return batch;
}

ImageWiseSampler::ImageWiseSampler(const DatasetIndex& index, Rng& rng)
    : index_(&index), rng_(&rng), eligible_(collect_eligible(index)) {
  require_two_classes(index);
  skipped_ = index.size() - eligible_.size();
  if (eligible_.empty()) throw ConfigError("no class has 2 or more records");
}

TripletBatch ImageWiseSampler::next(std::size_t n_anchors) {
  if (n_anchors == 0) throw ConfigError("n_anchors must be >= 1");
  TripletBatch batch;
  batch.triplets.reserve(n_anchors);
  while (batch.triplets.size() < n_anchors) {
    if (cursor_ == order_.size()) {
      order_ = eligible_;
      rng_->shuffle(std::span<std::size_t>(order_));
      cursor_ = 0;
    }
    batch.triplets.push_back(complete_triplet(*index_, order_[cursor_++], *rng_));
  }
  return batch;
}

std::vector<std::size_t> sample_batch_wise(const DatasetIndex& index, std::size_t n_classes,
                                           std::size_t m_per_class, Rng& rng) {
  if (n_classes < 2) throw ConfigError("batch-wise sampling needs n_classes >= 2");
  if (m_per_class == 0) throw ConfigError("m_per_class must be >= 1");
  if (index.class_count() < n_classes) {
    throw ConfigError("batch-wise sampling wants " + std::to_string(n_classes) +
                      " classes but only " + std::to_string(index.class_count()) + " exist");
  }
  std::vector<int> classes;
  classes.reserve(index.class_count());
  for (const auto& [cls, _] : index.classes()) classes.push_back(cls);
  for (std::size_t i = 0; i < n_classes; ++i) {
    const std::size_t j = i + rng.uniform_index(classes.size() - i);
    std::swap(classes[i], classes[j]);
  }
  std::vector<std::size_t> out;
  out.reserve(n_classes * m_per_class);
  for (std::size_t c = 0; c < n_classes; ++c) {
    std::vector<std::size_t> members = index.records_of(classes[c]);
    const std::size_t take = std::min(m_per_class, members.size());
    for (std::size_t i = 0; i < take; ++i) {
      const std::size_t j = i + rng.uniform_index(members.size() - i);
      std::swap(members[i], members[j]);
      out.push_back(members[i]);
    }
  }
  return out;
}

PairList enumerate_pairs(std::span<const int> class_ids) {
  PairList out;
  const std::size_t n = class_ids.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      (class_ids[i] == class_ids[j] ? out.positives : out.negatives).push_back({i, j});
    }
  }
  return out;
}

PairList triplets_to_pairs(const TripletBatch& batch) {
  PairList out;
  out.positives.reserve(batch.triplets.size());
  out.negatives.reserve(batch.triplets.size());
  for (std::size_t t = 0; t < batch.triplets.size(); ++t) {
    out.positives.push_back({3 * t, 3 * t + 1});
    out.negatives.push_back({3 * t, 3 * t + 2});
  }
  return out;
}

}  // namespace sgml
