#include "sgml/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <string_view>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "sgml/errors.hpp"

namespace sgml {

namespace {

constexpr std::uint64_t kPrototypeStream = 1;
constexpr std::uint64_t kProjectionStream = 2;
constexpr std::uint64_t kOffsetStream = 3;
constexpr std::uint64_t kImageStream = 4;
constexpr std::uint64_t kNuisanceStream = 5;
constexpr int kMaxPrototypeRedraws = 1000;

std::string class_record_id(std::size_t cls, std::size_t img) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "c%05zu_%03zu", cls, img);
  return buf;
}

}  // namespace

std::string format_real(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

void DatasetSpec::validate() const {
  if (n_categories == 0 || classes_per_category == 0 || images_per_class == 0 ||
      n_attributes == 0 || feature_dim == 0) {
    throw ConfigError("dataset spec: all counts must be >= 1");
  }
  if (n_attributes < n_categories) {
    throw ConfigError("dataset spec: K=" + std::to_string(n_attributes) +
                      " is smaller than the number of categories (" +
                      std::to_string(n_categories) + ")");
  }
  if (!(attribute_flip_noise >= 0.0 && attribute_flip_noise < 1.0)) {
    throw ConfigError("dataset spec: attribute_flip_noise must be in [0, 1)");
  }
  if (!(feature_noise_sigma >= 0.0) || !(class_offset_sigma >= 0.0)) {
    throw ConfigError("dataset spec: noise sigmas must be >= 0");
  }
  if (!(nuisance_gain >= 0.0)) throw ConfigError("dataset spec: nuisance_gain must be >= 0");
  if (!(style_density >= 0.0 && style_density <= 1.0)) {
    throw ConfigError("dataset spec: style_density must be in [0, 1]");
  }
}

std::size_t DatasetSpec::category_block() const {
  return std::max<std::size_t>(1, n_attributes / (2 * n_categories));
}

std::vector<std::vector<std::uint8_t>> class_prototypes(const DatasetSpec& spec) {
  spec.validate();
  Rng rng(Rng(spec.seed).derive_seed(kPrototypeStream));
  const std::size_t block = spec.category_block();
  const std::size_t style_begin = block * spec.n_categories;
  const std::size_t n_classes = spec.n_categories * spec.classes_per_category;

  std::vector<std::vector<std::uint8_t>> out;
  out.reserve(n_classes);
  std::set<std::vector<std::uint8_t>> seen;
  for (std::size_t cat = 0; cat < spec.n_categories; ++cat) {
    for (std::size_t j = 0; j < spec.classes_per_category; ++j) {
      std::vector<std::uint8_t> proto(spec.n_attributes, 0);
      for (std::size_t b = cat * block; b < (cat + 1) * block; ++b) proto[b] = 1;
      int attempt = 0;
      do {
        if (++attempt > kMaxPrototypeRedraws) {
          throw ConfigError("dataset spec: cannot draw " + std::to_string(spec.classes_per_category) +
                            " distinct classes per category from " +
                            std::to_string(spec.n_attributes - style_begin) + " style attributes");
        }
        for (std::size_t b = style_begin; b < spec.n_attributes; ++b) {
          proto[b] = rng.bernoulli(spec.style_density) ? 1 : 0;
        }
      } while (seen.contains(proto));
      seen.insert(proto);
      out.push_back(std::move(proto));
    }
  }
  return out;
}

Dataset generate(const DatasetSpec& spec) {
  const auto protos = class_prototypes(spec);
  const Rng root(spec.seed);
  const std::size_t K = spec.n_attributes;
  const std::size_t D = spec.feature_dim;

  // Projection scaled so a typical prototype maps to unit-variance features.
  Rng proj_rng(root.derive_seed(kProjectionStream));
  const double active = static_cast<double>(spec.category_block()) +
                        spec.style_density * static_cast<double>(K - spec.category_block() * spec.n_categories);
  const double scale = 1.0 / std::sqrt(std::max(active, 1.0));
  Matrix projection(D, K);
  for (Eigen::Index r = 0; r < projection.rows(); ++r) {
    for (Eigen::Index c = 0; c < projection.cols(); ++c) projection(r, c) = proj_rng.normal() * scale;
  }

  // The subspace cannot be wider than the feature space.
  const auto rank = static_cast<Eigen::Index>(std::min(spec.nuisance_rank, spec.feature_dim));
  Rng nuisance_rng(root.derive_seed(kNuisanceStream));
  Matrix nuisance_basis(D, rank);
  for (Eigen::Index r = 0; r < nuisance_basis.rows(); ++r) {
    for (Eigen::Index c = 0; c < nuisance_basis.cols(); ++c) nuisance_basis(r, c) = nuisance_rng.normal();
  }

  Rng offset_rng(root.derive_seed(kOffsetStream));
  Rng image_rng(root.derive_seed(kImageStream));
  Vector nuisance(rank);

  Dataset ds;
  ds.n_attributes = K;
  ds.feature_dim = D;
  ds.records.reserve(spec.record_count());
  for (std::size_t cls = 0; cls < protos.size(); ++cls) {
    Vector proto(K);
    for (std::size_t k = 0; k < K; ++k) proto[k] = protos[cls][k];
    Vector centre = projection * proto;
    for (std::size_t d = 0; d < D; ++d) centre[d] += offset_rng.normal() * spec.class_offset_sigma;

    for (std::size_t img = 0; img < spec.images_per_class; ++img) {
      ImageRecord rec;
      rec.id = class_record_id(cls, img);
      rec.class_id = static_cast<int>(cls);
      rec.attributes = protos[cls];
      for (auto& bit : rec.attributes) {
        if (image_rng.bernoulli(spec.attribute_flip_noise)) bit ^= 1;
      }
      rec.features.resize(D);
      for (std::size_t d = 0; d < D; ++d) {
        rec.features[d] = centre[d] + image_rng.normal() * spec.feature_noise_sigma;
      }
      for (Eigen::Index j = 0; j < nuisance.size(); ++j) nuisance[j] = image_rng.normal() * spec.nuisance_gain * spec.feature_noise_sigma;
      if (nuisance.size() > 0) {
        const Vector shift = nuisance_basis * nuisance;
        for (std::size_t d = 0; d < D; ++d) rec.features[d] += shift[static_cast<Eigen::Index>(d)];
      }
      ds.records.push_back(std::move(rec));
    }
  }
  return ds;
}

void Dataset::validate() const {
  std::unordered_set<std::string> ids;
  for (const auto& r : records) {
    if (r.attributes.size() != n_attributes || r.features.size() != feature_dim) {
      throw ConfigError("dataset: record " + r.id + " has wrong K or D");
    }
    if (!ids.insert(r.id).second) throw ConfigError("dataset: duplicate id " + r.id);
  }
  std::unordered_set<std::string> assigned;
  for (const auto& [name, members] : splits) {
    for (const auto& id : members) {
      if (!ids.contains(id)) throw ConfigError("split " + name + ": unknown id " + id);
      if (!assigned.insert(id).second) throw ConfigError("split " + name + ": id " + id + " is in more than one split");
    }
  }
}

std::vector<std::size_t> Dataset::split_indices(const std::string& name) const {
  const auto it = splits.find(name);
  if (it == splits.end()) throw ConfigError("dataset has no split named '" + name + "'");
  std::unordered_map<std::string, std::size_t> pos;
  pos.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) pos.emplace(records[i].id, i);
  std::vector<std::size_t> out;
  out.reserve(it->second.size());
  for (const auto& id : it->second) {
    const auto p = pos.find(id);
    if (p == pos.end()) throw ConfigError("split " + name + ": unknown id " + id);
    out.push_back(p->second);
  }
  return out;
}

std::vector<std::size_t> Dataset::all_indices() const {
  std::vector<std::size_t> out(records.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = i;
  return out;
}

Matrix Dataset::features(const std::vector<std::size_t>& indices) const {
  Matrix m(static_cast<Eigen::Index>(indices.size()), static_cast<Eigen::Index>(feature_dim));
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto& f = records.at(indices[r]).features;
    std::copy(f.begin(), f.end(), m.data() + r * feature_dim);
  }
  return m;
}

std::vector<int> Dataset::labels(const std::vector<std::size_t>& indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(records.at(i).class_id);
  return out;
}

// ---------------------------------------------------------------------------
// SGMLDATA v1

std::string to_sgmldata(const Dataset& dataset) {
  std::string out = "SGMLDATA v1 K=" + std::to_string(dataset.n_attributes) +
                    " D=" + std::to_string(dataset.feature_dim) + "\n";
  for (const auto& r : dataset.records) {
    out += r.id;
    out += '\t';
    out += std::to_string(r.class_id);
    out += '\t';
    for (auto bit : r.attributes) out += bit ? '1' : '0';
    out += '\t';
    for (std::size_t d = 0; d < r.features.size(); ++d) {
      if (d) out += ',';
      out += format_real(r.features[d]);
    }
    out += '\n';
  }
  return out;
}

namespace {

std::vector<std::string_view> split_on(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

std::size_t parse_header_count(std::string_view token, std::string_view key, std::size_t line) {
  if (token.substr(0, key.size()) != key) throw ParseError("malformed header, expected " + std::string(key), line);
  std::size_t value = 0;
  const auto body = token.substr(key.size());
  const auto res = std::from_chars(body.data(), body.data() + body.size(), value);
  if (res.ec != std::errc() || res.ptr != body.data() + body.size() || value == 0) {
    throw ParseError("malformed header value for " + std::string(key), line);
  }
  return value;
}

}  // namespace

Dataset parse_sgmldata(const std::string& text) {
  Dataset ds;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError("empty file", 1);
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  {
    const auto tokens = split_on(line, ' ');
    if (tokens.size() != 4 || tokens[0] != "SGMLDATA" || tokens[1] != "v1") {
      throw ParseError("malformed header, expected 'SGMLDATA v1 K=<k> D=<d>'", line_no);
    }
    ds.n_attributes = parse_header_count(tokens[2], "K=", line_no);
    ds.feature_dim = parse_header_count(tokens[3], "D=", line_no);
  }
  std::unordered_set<std::string> ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_on(line, '\t');
    if (fields.size() != 4) throw ParseError("expected 4 tab-separated fields, got " + std::to_string(fields.size()), line_no);
    ImageRecord rec;
    rec.id = std::string(fields[0]);
    if (rec.id.empty()) throw ParseError("empty id", line_no);
    if (!ids.insert(rec.id).second) throw ParseError("duplicate id " + rec.id, line_no);

    const auto cls = fields[1];
    const auto res = std::from_chars(cls.data(), cls.data() + cls.size(), rec.class_id);
    if (res.ec != std::errc() || res.ptr != cls.data() + cls.size()) throw ParseError("bad class id", line_no);

    if (fields[2].size() != ds.n_attributes) {
      throw ParseError("expected " + std::to_string(ds.n_attributes) + " attribute bits, got " +
                           std::to_string(fields[2].size()),
                       line_no);
    }
    rec.attributes.reserve(ds.n_attributes);
    for (char c : fields[2]) {
      if (c != '0' && c != '1') throw ParseError("attribute bits must be 0 or 1", line_no);
      rec.attributes.push_back(c == '1' ? 1 : 0);
    }

    const auto values = split_on(fields[3], ',');
    if (values.size() != ds.feature_dim) {
      throw ParseError("expected " + std::to_string(ds.feature_dim) + " features, got " +
                           std::to_string(values.size()),
                       line_no);
    }
    rec.features.reserve(ds.feature_dim);
    for (const auto v : values) {
      double x = 0.0;
      const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
      if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw ParseError("bad real '" + std::string(v) + "'", line_no);
      if (!std::isfinite(x)) throw ParseError("non-finite feature", line_no);
      rec.features.push_back(x);
    }
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

std::string splits_to_json(const Dataset& dataset) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [name, ids] : dataset.splits) j[name] = ids;
  return j.dump(1) + "\n";
}

void splits_from_json(Dataset& dataset, const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("splits json: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("splits json: expected an object");
  dataset.splits.clear();
  for (const auto& [name, ids] : j.items()) {
    if (!ids.is_array()) throw ParseError("splits json: '" + name + "' is not an array");
    auto& members = dataset.splits[name];
    for (const auto& id : ids) {
      if (!id.is_string()) throw ParseError("splits json: ids must be strings");
      members.push_back(id.get<std::string>());
    }
  }
  try {
    dataset.validate();
  } catch (const ConfigError& e) {
    throw ParseError(e.what());
  }
}

std::filesystem::path splits_path_for(const std::filesystem::path& data_path) {
  return std::filesystem::path(data_path.string() + ".splits.json");
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void save(const Dataset& dataset, const std::filesystem::path& path) {
  dataset.validate();
  write_file(path, to_sgmldata(dataset));
  const auto sidecar = splits_path_for(path);
  if (!dataset.splits.empty()) {
    write_file(sidecar, splits_to_json(dataset));
  } else {
    std::filesystem::remove(sidecar);
  }
}

Dataset load(const std::filesystem::path& path) {
  Dataset ds = parse_sgmldata(read_file(path));
  const auto sidecar = splits_path_for(path);
  if (std::filesystem::exists(sidecar)) splits_from_json(ds, read_file(sidecar));
  return ds;
}

// ---------------------------------------------------------------------------
// splits

Dataset split(const Dataset& dataset, const SplitPolicy& policy, Rng& rng, SplitSummary* summary) {
  Dataset out = dataset;
  out.splits.clear();
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < dataset.records.size(); ++i) by_class[dataset.records[i].class_id].push_back(i);
  SplitSummary local;

  auto ids_of = [&](const std::vector<std::size_t>& idx, std::size_t from, std::size_t to,
                    std::vector<std::string>& dst) {
    for (std::size_t i = from; i < to; ++i) dst.push_back(dataset.records[idx[i]].id);
  };

  if (const auto* inst = std::get_if<InstanceRetrieval>(&policy)) {
    if (!(inst->train_fraction >= 0.0 && inst->train_fraction < 1.0) ||
        !(inst->query_fraction > 0.0 && inst->query_fraction < 1.0)) {
      throw ConfigError("instance split: train_fraction must be in [0,1), query_fraction in (0,1)");
    }
    auto& train = out.splits["train"];
    auto& query = out.splits["query"];
    auto& gallery = out.splits["gallery"];
    for (auto& [cls, idx] : by_class) {
      rng.shuffle(std::span<std::size_t>(idx));
      const std::size_t n = idx.size();
      // Keep a query and a gallery record whenever the class has two.
      const std::size_t keep = n >= 2 ? 2 : n;
      const std::size_t n_train = std::min(
          static_cast<std::size_t>(std::floor(inst->train_fraction * static_cast<double>(n))), n - keep);
      const std::size_t n_test = n - n_train;
      ids_of(idx, 0, n_train, train);
      if (n_test == 1) {
        ids_of(idx, n_train, n, gallery);
        ++local.warnings;
        continue;
      }
      const auto q = std::clamp<std::size_t>(
          static_cast<std::size_t>(std::llround(inst->query_fraction * static_cast<double>(n_test))), 1,
          n_test - 1);
      ids_of(idx, n_train, n_train + q, query);
      ids_of(idx, n_train + q, n, gallery);
    }
  } else {
    const auto& cr = std::get<ClassRetrieval>(policy);
    if (!(cr.class_fraction > 0.0 && cr.class_fraction < 1.0)) {
      throw ConfigError("class split: class_fraction must be in (0,1)");
    }
    if (by_class.size() < 2) throw ConfigError("class split needs at least 2 classes");
    std::vector<int> classes;
    for (const auto& [cls, _] : by_class) classes.push_back(cls);
    rng.shuffle(std::span<int>(classes));
    const auto n_train = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(cr.class_fraction * static_cast<double>(classes.size()))), 1,
        classes.size() - 1);
    std::sort(classes.begin(), classes.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::sort(classes.begin() + static_cast<std::ptrdiff_t>(n_train), classes.end());
    auto& train = out.splits["train"];
    auto& test = out.splits["test"];
    for (std::size_t c = 0; c < classes.size(); ++c) {
      const auto& idx = by_class[classes[c]];
      ids_of(idx, 0, idx.size(), c < n_train ? train : test);
    }
  }
  if (summary) *summary = local;
  return out;
}

}  // namespace sgml
