#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <set>

#include "sgml/errors.hpp"
#include "sgml/dataset.hpp"
#include "sgml/similarity.hpp"

using namespace sgml;
namespace fs = std::filesystem;

namespace {

std::vector<double> as_real(const std::vector<std::uint8_t>& bits) { return {bits.begin(), bits.end()}; }

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "sgml_dataset_test";
  fs::create_directories(dir);
  return dir / name;
}

Dataset three_records() {
  Dataset d;
  d.n_attributes = 3;
  d.feature_dim = 2;
  d.records = {{"a", 0, {1, 0, 1}, {0.1, -2.5}}, {"b", 0, {1, 1, 0}, {1.0 / 3.0, 1e-300}}, {"c", 4, {0, 0, 0}, {-0.0, 12345.678}}};
  return d;
}

}  // namespace

TEST(Generate, DefaultSpecCounts) {
  const Dataset d = generate(DatasetSpec{});
  EXPECT_EQ(d.records.size(), 1000u);
  EXPECT_EQ(d.n_attributes, 64u);
  EXPECT_EQ(d.feature_dim, 32u);
  EXPECT_NO_THROW(d.validate());
  EXPECT_EQ(generate(DatasetSpec{}), d);
}

TEST(Generate, NoiselessCollapse) {
  DatasetSpec s;
  s.attribute_flip_noise = 0.0;
  s.feature_noise_sigma = 0.0;
  const Dataset d = generate(s);
  for (std::size_t i = 0; i < d.records.size(); i += s.images_per_class) {
    for (std::size_t j = 1; j < s.images_per_class; ++j) {
      EXPECT_EQ(d.records[i + j].attributes, d.records[i].attributes);
      EXPECT_EQ(d.records[i + j].features, d.records[i].features);
    }
  }
}

TEST(Generate, CategoryBlocksAndDistinctPrototypes) {
  const DatasetSpec s;
  const auto protos = class_prototypes(s);
  const std::size_t block = s.category_block();
  ASSERT_EQ(protos.size(), 200u);
  for (std::size_t a = 0; a < protos.size(); ++a) {
    const std::size_t ca = a / s.classes_per_category;
    for (std::size_t b = a + 1; b < protos.size(); ++b) {
      const std::size_t cb = b / s.classes_per_category;
      EXPECT_NE(protos[a], protos[b]);
      for (std::size_t cat = 0; cat < s.n_categories; ++cat) {
        for (std::size_t i = cat * block; i < (cat + 1) * block; ++i) {
          if (ca == cb) {
            EXPECT_EQ(protos[a][i], protos[b][i]);
          } else {
            EXPECT_FALSE(protos[a][i] == 1 && protos[b][i] == 1);
          }
        }
      }
    }
  }
}

TEST(Generate, GranularityOrderingAcrossSeeds) {
  int held = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    DatasetSpec s;
    s.seed = seed;
    const Dataset d = generate(s);
    double within = 0, same_cat = 0, cross = 0;
    std::size_t nw = 0, ns = 0, nc = 0;
    for (std::size_t i = 0; i < d.records.size(); i += 3) {
      for (std::size_t j = i + 1; j < d.records.size(); j += 7) {
        const auto& a = d.records[i];
        const auto& b = d.records[j];
        const auto pa = as_real(a.attributes), pb = as_real(b.attributes);
        double g = 0;
        try {
          g = sgs_mapping(pa, pb);
        } catch (const DomainError&) {
          continue;  // an image whose bits all flipped off
        }
        const auto cat_a = static_cast<std::size_t>(a.class_id) / s.classes_per_category;
        const auto cat_b = static_cast<std::size_t>(b.class_id) / s.classes_per_category;
        if (a.class_id == b.class_id) within += g, ++nw;
        else if (cat_a == cat_b) same_cat += g, ++ns;
        else cross += g, ++nc;
      }
    }
    held += (within / nw > same_cat / ns) && (same_cat / ns > cross / nc);
  }
  EXPECT_GE(held, 9);
}

TEST(Generate, InvalidSpec) {
  DatasetSpec s;
  s.n_attributes = 4;
  EXPECT_THROW(s.validate(), ConfigError);
  EXPECT_THROW(generate(s), ConfigError);
  s = DatasetSpec{};
  s.attribute_flip_noise = 1.0;
  EXPECT_THROW(generate(s), ConfigError);
}

TEST(Generate, NarrowFeatureSpace) {
  DatasetSpec s;
  s.feature_dim = 2;  // narrower than the nuisance subspace
  const Dataset d = generate(s);
  EXPECT_EQ(d.feature_dim, 2u);
  EXPECT_NO_THROW(d.validate());
}

TEST(FileFormat, RoundTripSmallSet) {
  const Dataset d = three_records();
  const fs::path p = temp_path("three.sgml");
  save(d, p);
  EXPECT_EQ(load(p), d);
  EXPECT_FALSE(fs::exists(splits_path_for(p)));
}

TEST(FileFormat, RoundTripWithSplitsIsBitExact) {
  DatasetSpec s;
  s.classes_per_category = 250;  // 10k records
  Rng rng(1);
  const Dataset d = split(generate(s), InstanceRetrieval{}, rng);
  ASSERT_EQ(d.records.size(), 10000u);
  const fs::path p = temp_path("big.sgml");
  save(d, p);
  const Dataset back = load(p);
  EXPECT_EQ(back, d);
  const auto all = d.all_indices();
  const Matrix a = d.features(all), b = back.features(all);
  EXPECT_EQ(std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())), 0);
}

TEST(FileFormat, ParseErrorsCarryLineNumbers) {
  auto line_of = [](const std::string& text) -> std::size_t {
    try {
      parse_sgmldata(text);
    } catch (const ParseError& e) {
      return e.line();
    }
    return 0;
  };
  EXPECT_EQ(line_of("SGMLDATA v1 K=3 D=2\na\t0\t101\t1,2\nb\t0\t1011\t1,2\n"), 3u);
  EXPECT_EQ(line_of("SGMLDATA v2 K=3 D=2\n"), 1u);
  EXPECT_EQ(line_of("SGMLDATA v1 K=3 D=2\na\t0\t101\t1,2,3\n"), 2u);
  EXPECT_EQ(line_of("SGMLDATA v1 K=3 D=2\na\t0\t101\t1,2\na\t1\t101\t1,2\n"), 3u);
  EXPECT_EQ(line_of("SGMLDATA v1 K=3 D=2\na\t0\t101\tnan,2\n"), 2u);
  EXPECT_EQ(line_of("SGMLDATA v1 K=3 D=2\na\t0\t101\tinf,2\n"), 2u);
  EXPECT_EQ(line_of("SGMLDATA v1 K=3 D=2\na\t0\t1x1\t1,2\n"), 2u);
  EXPECT_EQ(line_of("SGMLDATA v1 K=3 D=2\na\t0\t101\n"), 2u);
}

TEST(FileFormat, SplitSidecarRejectsUnknownIds) {
  Dataset d = three_records();
  EXPECT_THROW(splits_from_json(d, R"({"train": ["a", "zz"]})"), std::exception);
  EXPECT_THROW(splits_from_json(d, R"({"train": ["a"], "test": ["a"]})"), std::exception);
  splits_from_json(d, R"({"train": ["a"], "test": ["b", "c"]})");
  EXPECT_EQ(d.split_indices("test"), (std::vector<std::size_t>{1, 2}));
}

TEST(Split, ClassRetrievalHalves) {
  DatasetSpec s;
  s.n_categories = 2;
  s.classes_per_category = 5;
  Rng rng(2);
  const Dataset d = split(generate(s), ClassRetrieval{0.5}, rng);
  std::set<int> train, test;
  for (auto i : d.split_indices("train")) train.insert(d.records[i].class_id);
  for (auto i : d.split_indices("test")) test.insert(d.records[i].class_id);
  EXPECT_EQ(train.size(), 5u);
  EXPECT_EQ(test.size(), 5u);
  for (int c : train) EXPECT_EQ(test.count(c), 0u);
}

TEST(Split, InstanceRetrievalSmallClasses) {
  Dataset d;
  d.n_attributes = 1;
  d.feature_dim = 1;
  d.records = {{"x0", 0, {1}, {1}}, {"x1", 0, {1}, {2}}, {"y0", 1, {0}, {3}}};
  Rng rng(3);
  SplitSummary summary;
  const Dataset out = split(d, InstanceRetrieval{}, rng, &summary);
  EXPECT_EQ(out.splits.at("query").size(), 1u);
  EXPECT_EQ(out.splits.at("gallery").size(), 2u);
  EXPECT_EQ(summary.warnings, 1u);
  for (const auto& id : out.splits.at("query")) EXPECT_EQ(id[0], 'x');
}

TEST(Split, InstanceRetrievalDefaultSpec) {
  Rng rng(4);
  const Dataset d = split(generate(DatasetSpec{}), InstanceRetrieval{}, rng);
  EXPECT_EQ(d.splits.at("train").size(), 600u);
  EXPECT_EQ(d.splits.at("query").size(), 200u);
  EXPECT_EQ(d.splits.at("gallery").size(), 200u);
  std::set<int> train_classes;
  for (auto i : d.split_indices("train")) train_classes.insert(d.records[i].class_id);
  EXPECT_EQ(train_classes.size(), 200u);
  EXPECT_NO_THROW(d.validate());
}

TEST(Split, DeterministicUnderSeed) {
  Rng a(5), b(5);
  const Dataset g = generate(DatasetSpec{});
  EXPECT_EQ(split(g, InstanceRetrieval{}, a).splits, split(g, InstanceRetrieval{}, b).splits);
}

TEST(FormatReal, ParsesBackExactly) {
  Rng rng(6);
  for (int i = 0; i < 1000; ++i) {
    const double x = rng.normal() * std::pow(10.0, rng.uniform(-290, 290));
    EXPECT_EQ(std::stod(format_real(x)), x);
  }
}
