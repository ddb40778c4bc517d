#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "sgml/matrix.hpp"
#include "sgml/rng.hpp"

namespace sgml {

struct ImageRecord {
  std::string id;
  int class_id = 0;
  std::vector<std::uint8_t> attributes;  // K bits
  std::vector<double> features;          // D reals

  bool operator==(const ImageRecord&) const = default;
};

/// Parameters of the synthetic generator.
///
/// The attribute space has one disjoint block of "category bits" per
/// category followed by "style bits". A class turns on its category block
/// and a random, class-specific subset of style bits; images copy the class
/// bits and flip each one independently with `attribute_flip_noise`.
/// Features are a fixed random projection of the class bits plus a class
/// offset plus per-image Gaussian noise plus a per-image nuisance drawn in a
/// fixed low-rank subspace shared by all classes. The nuisance dominates raw
/// cosine similarity, so a learned embedding has something to remove.
struct DatasetSpec {
  std::size_t n_categories = 8;
  std::size_t classes_per_category = 25;
  std::size_t images_per_class = 5;
  std::size_t n_attributes = 64;  // K
  std::size_t feature_dim = 32;   // D
  double attribute_flip_noise = 0.05;
  double feature_noise_sigma = 0.6;
  double class_offset_sigma = 0.4;
  double style_density = 0.25;
  std::size_t nuisance_rank = 4;  // capped at feature_dim
  double nuisance_gain = 1.5;  // nuisance scale relative to feature_noise_sigma
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t category_block() const;
  std::size_t record_count() const {
    return n_categories * classes_per_category * images_per_class;
  }
};

struct Dataset {
  std::vector<ImageRecord> records;
  std::size_t n_attributes = 0;
  std::size_t feature_dim = 0;
  /// Named splits (e.g. train / query / gallery) as lists of record ids.
  std::map<std::string, std::vector<std::string>> splits;

  bool operator==(const Dataset&) const = default;

  void validate() const;
  /// Record positions for a named split, in split order. Throws ConfigError
  /// for unknown split names or ids.
  std::vector<std::size_t> split_indices(const std::string& name) const;
  std::vector<std::size_t> all_indices() const;
  Matrix features(const std::vector<std::size_t>& indices) const;
  std::vector<int> labels(const std::vector<std::size_t>& indices) const;
};

Dataset generate(const DatasetSpec& spec);

/// Per-class attribute prototypes as drawn by `generate` (before flip noise),
/// indexed by class id.
std::vector<std::vector<std::uint8_t>> class_prototypes(const DatasetSpec& spec);

/// SGMLDATA v1 text format, splits (when any) in "<path>.splits.json".
void save(const Dataset& dataset, const std::filesystem::path& path);
Dataset load(const std::filesystem::path& path);

std::string to_sgmldata(const Dataset& dataset);
Dataset parse_sgmldata(const std::string& text);
std::string splits_to_json(const Dataset& dataset);
void splits_from_json(Dataset& dataset, const std::string& text);
std::filesystem::path splits_path_for(const std::filesystem::path& data_path);

/// Records of each class are divided into train / query / gallery. A class
/// gives floor(train_fraction * n) records to training, capped so that at
/// least two remain for testing; of the t test records round(query_fraction * t)
/// (at least one, leaving at least one) become queries. A single-record class
/// goes wholly to the gallery and counts a warning.
struct InstanceRetrieval {
  double train_fraction = 0.6;
  double query_fraction = 0.5;
};

/// Classes are divided into disjoint train and test sets.
struct ClassRetrieval {
  double class_fraction = 0.5;
};

using SplitPolicy = std::variant<InstanceRetrieval, ClassRetrieval>;

struct SplitSummary {
  std::size_t warnings = 0;
};

Dataset split(const Dataset& dataset, const SplitPolicy& policy, Rng& rng,
              SplitSummary* summary = nullptr);

/// Decimal text with 17 significant digits; parses back bit-exactly.
std::string format_real(double value);

}  // namespace sgml
