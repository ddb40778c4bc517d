#include "sgml_cli/cli.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>
#include <utility>

#include <CLI11.hpp>
#include <json.hpp>

#include "sgml/checkpoint.hpp"
#include "sgml/errors.hpp"

namespace sgml::cli {

using ordered_json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSplitStream = 11;

const char* const kConfigFile = "config.json";

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Files a command writes. Unless `commit` is called, every registered file
/// is removed on destruction, along with the output directory if this
/// command created it and left it empty.
class Outputs {
 public:
  explicit Outputs(fs::path dir) : dir_(std::move(dir)) {
    if (dir_.empty()) dir_ = ".";
    created_dir_ = !fs::exists(dir_);
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec || !fs::is_directory(dir_)) throw ConfigError("cannot create output directory " + dir_.string());
  }
  Outputs(const Outputs&) = delete;
  Outputs& operator=(const Outputs&) = delete;
  ~Outputs() {
    if (committed_) return;
    std::error_code ec;
    for (const auto& f : files_) fs::remove(f, ec);
    if (created_dir_ && fs::is_empty(dir_, ec)) fs::remove(dir_, ec);
  }

  fs::path path(const std::string& name) {
    fs::path p = dir_ / name;
    files_.push_back(p);
    return p;
  }
  void write(const std::string& name, const std::string& text) {
    const fs::path p = path(name);
    std::ofstream out(p, std::ios::binary);
    out << text;
    if (!out) throw ConfigError("cannot write " + p.string());
  }
  void commit() { committed_ = true; }

 private:
  fs::path dir_;
  std::vector<fs::path> files_;
  bool created_dir_ = false;
  bool committed_ = false;
};

void write_config_sidecar(Outputs& outputs, const std::string& command, const ExperimentConfig& config) {
  ordered_json j;
  j["command"] = command;
  j["config"] = ordered_json::parse(to_json(config));
  outputs.write(kConfigFile, j.dump(2) + "\n");
}

template <typename T>
T get_field(const ordered_json& j, const char* section, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("config ") + section + "." + key + ": " + e.what());
  }
}

void unknown_key(const char* section, const std::string& key) {
  throw ParseError(std::string("config ") + section + ": unknown key '" + key + "'");
}

}  // namespace

std::string to_string(SplitKind kind) { return kind == SplitKind::instance ? "instance" : "class"; }

SplitKind split_kind_from_string(const std::string& s) {
  if (s == "instance") return SplitKind::instance;
  if (s == "class") return SplitKind::class_disjoint;
  throw ConfigError("unknown split '" + s + "' (expected instance or class)");
}

std::string to_string(RetrievalMode mode) {
  return mode == RetrievalMode::separate ? "separate" : "leave-one-out";
}

RetrievalMode retrieval_mode_from_string(const std::string& s) {
  if (s == "separate") return RetrievalMode::separate;
  if (s == "leave-one-out") return RetrievalMode::leave_one_out;
  throw ConfigError("unknown mode '" + s + "' (expected separate or leave-one-out)");
}

void ExperimentConfig::apply_seed() {
  data.seed = seed;
  train.seed = seed;
  gradcheck.seed = seed;
}

std::string to_json(const ExperimentConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  ordered_json d;
  d["path"] = c.data_path;
  d["n_categories"] = c.data.n_categories;
  d["classes_per_category"] = c.data.classes_per_category;
  d["images_per_class"] = c.data.images_per_class;
  d["n_attributes"] = c.data.n_attributes;
  d["feature_dim"] = c.data.feature_dim;
  d["attribute_flip_noise"] = c.data.attribute_flip_noise;
  d["feature_noise_sigma"] = c.data.feature_noise_sigma;
  d["class_offset_sigma"] = c.data.class_offset_sigma;
  d["style_density"] = c.data.style_density;
  d["nuisance_rank"] = c.data.nuisance_rank;
  d["nuisance_gain"] = c.data.nuisance_gain;
  j["data"] = d;
  ordered_json s;
  s["kind"] = to_string(c.split);
  s["train_fraction"] = c.instance.train_fraction;
  s["query_fraction"] = c.instance.query_fraction;
  s["class_fraction"] = c.classes.class_fraction;
  j["split"] = s;
  j["train"] = ordered_json::parse(sgml::to_json(c.train));
  ordered_json e;
  e["ks"] = c.ks;
  std::vector<std::string> layers;
  for (FeatureLayer l : c.layers) layers.push_back(sgml::to_string(l));
  e["layers"] = layers;
  e["mode"] = c.mode ? to_string(*c.mode) : "auto";
  j["eval"] = e;
  ordered_json w;
  w["alphas"] = c.alphas;
  w["betas"] = c.betas;
  j["sweep"] = w;
  ordered_json g;
  g["scalar_cases"] = c.gradcheck.scalar_cases;
  g["network_cases"] = c.gradcheck.network_cases;
  g["step"] = c.gradcheck.step;
  g["tolerance"] = c.gradcheck.tolerance;
  g["inject_sign_flip"] = c.gradcheck.inject_sign_flip;
  j["gradcheck"] = g;
  return j.dump();
}

ExperimentConfig experiment_config_from_json(const std::string& json, ExperimentConfig base) {
  ordered_json j;
  try {
    j = ordered_json::parse(json);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("config: expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "seed") {
      base.seed = get_field<std::uint64_t>(value, "", key);
    } else if (key == "data") {
      for (const auto& [k, v] : value.items()) {
        auto& d = base.data;
        if (k == "path") base.data_path = get_field<std::string>(v, "data", k);
        else if (k == "n_categories") d.n_categories = get_field<std::size_t>(v, "data", k);
        else if (k == "classes_per_category") d.classes_per_category = get_field<std::size_t>(v, "data", k);
        else if (k == "images_per_class") d.images_per_class = get_field<std::size_t>(v, "data", k);
        else if (k == "n_attributes") d.n_attributes = get_field<std::size_t>(v, "data", k);
        else if (k == "feature_dim") d.feature_dim = get_field<std::size_t>(v, "data", k);
        else if (k == "attribute_flip_noise") d.attribute_flip_noise = get_field<double>(v, "data", k);
        else if (k == "feature_noise_sigma") d.feature_noise_sigma = get_field<double>(v, "data", k);
        else if (k == "class_offset_sigma") d.class_offset_sigma = get_field<double>(v, "data", k);
        else if (k == "style_density") d.style_density = get_field<double>(v, "data", k);
        else if (k == "nuisance_rank") d.nuisance_rank = get_field<std::size_t>(v, "data", k);
        else if (k == "nuisance_gain") d.nuisance_gain = get_field<double>(v, "data", k);
        else unknown_key("data", k);
      }
    } else if (key == "split") {
      for (const auto& [k, v] : value.items()) {
        if (k == "kind") base.split = split_kind_from_string(get_field<std::string>(v, "split", k));
        else if (k == "train_fraction") base.instance.train_fraction = get_field<double>(v, "split", k);
        else if (k == "query_fraction") base.instance.query_fraction = get_field<double>(v, "split", k);
        else if (k == "class_fraction") base.classes.class_fraction = get_field<double>(v, "split", k);
        else unknown_key("split", k);
      }
    } else if (key == "train") {
      base.train = train_config_from_json(value.dump(), base.train);
    } else if (key == "eval") {
      for (const auto& [k, v] : value.items()) {
        if (k == "ks") {
          base.ks = get_field<std::vector<std::size_t>>(v, "eval", k);
        } else if (k == "layers") {
          base.layers.clear();
          for (const auto& name : get_field<std::vector<std::string>>(v, "eval", k)) {
            base.layers.push_back(feature_layer_from_string(name));
          }
        } else if (k == "mode") {
          const auto m = get_field<std::string>(v, "eval", k);
          base.mode = m == "auto" ? std::nullopt : std::optional(retrieval_mode_from_string(m));
        } else {
          unknown_key("eval", k);
        }
      }
    } else if (key == "sweep") {
      for (const auto& [k, v] : value.items()) {
        if (k == "alphas") base.alphas = get_field<std::vector<double>>(v, "sweep", k);
        else if (k == "betas") base.betas = get_field<std::vector<double>>(v, "sweep", k);
        else unknown_key("sweep", k);
      }
    } else if (key == "gradcheck") {
      for (const auto& [k, v] : value.items()) {
        auto& g = base.gradcheck;
        if (k == "scalar_cases") g.scalar_cases = get_field<std::size_t>(v, "gradcheck", k);
        else if (k == "network_cases") g.network_cases = get_field<std::size_t>(v, "gradcheck", k);
        else if (k == "step") g.step = get_field<double>(v, "gradcheck", k);
        else if (k == "tolerance") g.tolerance = get_field<double>(v, "gradcheck", k);
        else if (k == "inject_sign_flip") g.inject_sign_flip = get_field<bool>(v, "gradcheck", k);
        else unknown_key("gradcheck", k);
      }
    } else {
      unknown_key("", key);
    }
  }
  return base;
}

EvalSplit make_eval_split(const Dataset& dataset, std::optional<RetrievalMode> mode) {
  const bool has_qg = dataset.splits.contains("query") && dataset.splits.contains("gallery");
  const bool has_test = dataset.splits.contains("test");
  if (!mode) {
    if (has_qg) mode = RetrievalMode::separate;
    else if (has_test) mode = RetrievalMode::leave_one_out;
    else throw ConfigError("dataset has no query/gallery or test split to evaluate on");
  }
  EvalSplit split;
  split.mode = *mode;
  if (*mode == RetrievalMode::separate) {
    if (!has_qg) throw ConfigError("separate retrieval needs query and gallery splits");
    const auto q = dataset.split_indices("query");
    const auto g = dataset.split_indices("gallery");
    split.query_inputs = dataset.features(q);
    split.query_labels = dataset.labels(q);
    split.gallery_inputs = dataset.features(g);
    split.gallery_labels = dataset.labels(g);
    return split;
  }
  std::vector<std::size_t> pool;
  if (has_test) {
    pool = dataset.split_indices("test");
  } else if (has_qg) {
    pool = dataset.split_indices("query");
    const auto g = dataset.split_indices("gallery");
    pool.insert(pool.end(), g.begin(), g.end());
  } else {
    throw ConfigError("leave-one-out retrieval needs a test split or query/gallery splits");
  }
  split.query_inputs = dataset.features(pool);
  split.query_labels = dataset.labels(pool);
  return split;
}

PreparedData prepare_data(const ExperimentConfig& config) {
  PreparedData out;
  if (config.data_path.empty()) {
    out.dataset = generate(config.data);
  } else {
    out.dataset = load(config.data_path);
  }
  if (out.dataset.splits.empty()) {
    Rng rng(Rng(config.seed).derive_seed(kSplitStream));
    SplitSummary summary;
    const SplitPolicy policy = config.split == SplitKind::instance ? SplitPolicy(config.instance)
                                                                     : SplitPolicy(config.classes);
    out.dataset = split(out.dataset, policy, rng, &summary);
    out.split_warnings = summary.warnings;
  }
  if (!out.dataset.splits.contains("train")) throw ConfigError("dataset has no train split");
  out.train = TrainingSet::from(out.dataset, out.dataset.split_indices("train"));
  out.eval = make_eval_split(out.dataset, config.mode);
  return out;
}

GenDataResult cmd_gen_data(const ExperimentConfig& config, const fs::path& out_dir) {
  config.data.validate();
  Outputs outputs(out_dir);
  PreparedData data = prepare_data(config);
  GenDataResult result;
  result.data_file = outputs.path("dataset.sgml");
  result.splits_file = outputs.path(splits_path_for(result.data_file).filename().string());
  save(data.dataset, result.data_file);
  write_config_sidecar(outputs, "gen-data", config);

  std::ostringstream s;
  s << data.dataset.records.size() << " records, K=" << data.dataset.n_attributes
    << ", D=" << data.dataset.feature_dim;
  for (const auto& [name, ids] : data.dataset.splits) s << ", " << name << "=" << ids.size();
  if (data.split_warnings > 0) s << " (" << data.split_warnings << " classes with a single test record)";
  s << "\n";
  result.summary = s.str();
  outputs.commit();
  return result;
}

TrainCommandResult cmd_train(const ExperimentConfig& config, const fs::path& out_dir) {
  config.train.validate();
  Outputs outputs(out_dir);
  const PreparedData data = prepare_data(config);
  TrainCommandResult result;
  result.result = train(config.train, data.train);
  result.checkpoint_file = outputs.path("checkpoint.json");
  save_checkpoint(result.result.checkpoint, result.checkpoint_file);
  result.history_file = outputs.path("history.csv");
  outputs.write("history.csv", result.result.history.to_csv());
  write_config_sidecar(outputs, "train", config);
  outputs.commit();
  return result;
}

EvalCommandResult cmd_eval(const ExperimentConfig& config, const fs::path& checkpoint,
                           const fs::path& out_dir) {
  Outputs outputs(out_dir);
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const PreparedData data = prepare_data(config);
  if (ckpt.params.shape.input_dim != static_cast<std::size_t>(data.eval.query_inputs.cols())) {
    throw ConfigError("checkpoint expects " + std::to_string(ckpt.params.shape.input_dim) +
                      "-dim inputs but the dataset has " + std::to_string(data.eval.query_inputs.cols()));
  }
  EvalCommandResult result;
  result.reports = evaluate_layers(ckpt.params, data.eval, config.ks, config.layers);
  result.csv_file = outputs.path("recall.csv");
  outputs.write("recall.csv", recall_csv(result.reports));
  write_config_sidecar(outputs, "eval", config);
  outputs.commit();
  return result;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "alpha,beta,recall_at_1\n";
  for (const auto& r : rows) {
    out += format_real(r.alpha) + "," + format_real(r.beta) + "," + format_real(r.recall_at_1) + "\n";
  }
  return out;
}

SweepResult cmd_sweep(const ExperimentConfig& config, const fs::path& out_dir) {
  const std::set<double> alphas(config.alphas.begin(), config.alphas.end());
  const std::set<double> betas(config.betas.begin(), config.betas.end());
  if (alphas.empty() || betas.empty()) throw ConfigError("sweep needs at least one alpha and one beta");
  if (config.layers.empty()) throw ConfigError("sweep needs a feature layer");
  config.train.validate();
  Outputs outputs(out_dir);
  const PreparedData data = prepare_data(config);
  const std::size_t k1[] = {1};
  const FeatureLayer layer[] = {config.layers.front()};
  SweepResult result;
  for (double a : alphas) {
    for (double b : betas) {
      TrainConfig tc = config.train;
      tc.loss.alpha = a;
      tc.loss.beta = b;
      const TrainResult trained = train(tc, data.train);
      const auto reports = evaluate_layers(trained.checkpoint.params, data.eval, k1, layer);
      result.rows.push_back({a, b, reports.front().recall.at(1)});
    }
  }
  result.csv_file = outputs.path("sweep.csv");
  outputs.write("sweep.csv", sweep_csv(result.rows));
  write_config_sidecar(outputs, "sweep", config);
  outputs.commit();
  return result;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "variant,layer,k,recall,queries\n";
  for (const auto& row : rows) {
    for (const auto& [k, v] : row.report.recall) {
      out += sgml::to_string(row.variant) + "," + row.report.layer + "," + std::to_string(k) + "," +
             format_real(v) + "," + std::to_string(row.report.query_count) + "\n";
    }
  }
  return out;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  if (rows.empty()) return {};
  char buf[64];
  std::string out = "variant      layer";
  for (const auto& [k, _] : rows.front().report.recall) {
    std::snprintf(buf, sizeof buf, " %8s", ("R@" + std::to_string(k)).c_str());
    out += buf;
  }
  out += "\n";
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof buf, "%-12s %-5s", sgml::to_string(row.variant).c_str(), row.report.layer.c_str());
    out += buf;
    for (const auto& [k, v] : row.report.recall) {
      std::snprintf(buf, sizeof buf, " %8.4f", v);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

AblationResult cmd_ablate(const ExperimentConfig& config, const fs::path& out_dir) {
  if (config.layers.empty()) throw ConfigError("ablate needs a feature layer");
  config.train.validate();
  Outputs outputs(out_dir);
  const PreparedData data = prepare_data(config);
  AblationResult result;
  for (Variant v : {Variant::metric_only, Variant::attr_only, Variant::multitask, Variant::sgml}) {
    TrainConfig tc = config.train;
    tc.variant = v;
    const TrainResult trained = train(tc, data.train);
    const FeatureLayer layer[] = {v == Variant::attr_only ? FeatureLayer::fc : config.layers.front()};
    auto reports = evaluate_layers(trained.checkpoint.params, data.eval, config.ks, layer);
    result.rows.push_back({v, std::move(reports.front())});
  }
  result.csv_file = outputs.path("ablate.csv");
  outputs.write("ablate.csv", ablation_csv(result.rows));
  write_config_sidecar(outputs, "ablate", config);
  outputs.commit();
  return result;
}

GradCheckCommandResult cmd_gradcheck(const ExperimentConfig& config, const fs::path& out_dir) {
  Outputs outputs(out_dir);
  GradCheckCommandResult result;
  result.report = run_gradcheck(config.gradcheck);
  result.report_file = outputs.path("gradcheck.txt");
  outputs.write("gradcheck.txt", result.report.to_text());
  write_config_sidecar(outputs, "gradcheck", config);
  outputs.commit();
  return result;
}

namespace {

/// Flag values are applied after the config file, and only when given.
class FlagSet {
 public:
  template <typename T>
  CLI::Option* add(CLI::App* app, const std::string& name, const std::string& help,
                   std::function<void(ExperimentConfig&, const T&)> apply) {
    auto value = std::make_shared<T>();
    CLI::Option* opt = app->add_option(name, *value, help);
    appliers_.push_back([opt, value, apply](ExperimentConfig& c) {
      if (opt->count() > 0) apply(c, *value);
    });
    return opt;
  }
  CLI::Option* add_flag(CLI::App* app, const std::string& name, const std::string& help,
                        std::function<void(ExperimentConfig&)> apply) {
    CLI::Option* opt = app->add_flag(name, help);
    appliers_.push_back([opt, apply](ExperimentConfig& c) {
      if (opt->count() > 0) apply(c);
    });
    return opt;
  }
  void apply(ExperimentConfig& c) const {
    for (const auto& f : appliers_) f(c);
  }

 private:
  std::vector<std::function<void(ExperimentConfig&)>> appliers_;
};

using Sizes = std::vector<std::size_t>;
using Reals = std::vector<double>;
using Names = std::vector<std::string>;

void add_data_flags(CLI::App* app, FlagSet& flags) {
  flags.add<std::string>(app, "--data", "dataset file (SGMLDATA v1); generated when absent",
                         [](ExperimentConfig& c, const std::string& v) { c.data_path = v; });
  flags.add<std::size_t>(app, "--categories", "synthetic: number of categories",
                         [](ExperimentConfig& c, const std::size_t& v) { c.data.n_categories = v; });
  flags.add<std::size_t>(app, "--classes-per-category", "synthetic: classes per category",
                         [](ExperimentConfig& c, const std::size_t& v) { c.data.classes_per_category = v; });
  flags.add<std::size_t>(app, "--images-per-class", "synthetic: images per class",
                         [](ExperimentConfig& c, const std::size_t& v) { c.data.images_per_class = v; });
  flags.add<std::size_t>(app, "--attributes", "synthetic: attribute count K",
                         [](ExperimentConfig& c, const std::size_t& v) { c.data.n_attributes = v; });
  flags.add<std::size_t>(app, "--feature-dim", "synthetic: feature dimension D",
                         [](ExperimentConfig& c, const std::size_t& v) { c.data.feature_dim = v; });
  flags.add<double>(app, "--flip-noise", "synthetic: per-bit attribute flip probability",
                    [](ExperimentConfig& c, const double& v) { c.data.attribute_flip_noise = v; });
  flags.add<double>(app, "--feature-noise", "synthetic: per-image feature noise sigma",
                    [](ExperimentConfig& c, const double& v) { c.data.feature_noise_sigma = v; });
  flags.add<double>(app, "--nuisance-gain", "synthetic: nuisance scale relative to feature noise",
                    [](ExperimentConfig& c, const double& v) { c.data.nuisance_gain = v; });
  flags.add<std::string>(app, "--split", "split policy when the data has none: instance|class",
                         [](ExperimentConfig& c, const std::string& v) { c.split = split_kind_from_string(v); });
}

void add_train_flags(CLI::App* app, FlagSet& flags) {
  flags.add<std::string>(app, "--variant", "metric_only|attr_only|multitask|sgml",
                         [](ExperimentConfig& c, const std::string& v) { c.train.variant = variant_from_string(v); });
  flags.add<std::string>(app, "--sampling", "image|batch", [](ExperimentConfig& c, const std::string& v) {
    c.train.sampling = sampling_from_string(v);
  });
  flags.add<double>(app, "--alpha", "loss scale", [](ExperimentConfig& c, const double& v) { c.train.loss.alpha = v; });
  flags.add<double>(app, "--beta", "loss margin", [](ExperimentConfig& c, const double& v) { c.train.loss.beta = v; });
  flags.add<double>(app, "--lambda", "attribute loss weight",
                    [](ExperimentConfig& c, const double& v) { c.train.loss.lambda = v; });
  flags.add<double>(app, "--lr", "Adam learning rate",
                    [](ExperimentConfig& c, const double& v) { c.train.learning_rate = v; });
  flags.add<std::size_t>(app, "--epochs", "training epochs",
                         [](ExperimentConfig& c, const std::size_t& v) { c.train.epochs = v; });
  flags.add<std::string>(app, "--sgs-source", "predicted|truth", [](ExperimentConfig& c, const std::string& v) {
    c.train.sgs_source = sgs_source_from_string(v);
  });
  flags.add_flag(app, "--sgs-backprop", "let the loss gradient flow into the attribute head",
                 [](ExperimentConfig& c) { c.train.sgs_backprop = true; });
  flags.add<std::size_t>(app, "--n-anchors", "image-wise: triplets per batch",
                         [](ExperimentConfig& c, const std::size_t& v) { c.train.n_anchors = v; });
  flags.add<std::size_t>(app, "--n-classes", "batch-wise: classes per batch",
                         [](ExperimentConfig& c, const std::size_t& v) { c.train.n_classes = v; });
  flags.add<std::size_t>(app, "--m-per-class", "batch-wise: images per class",
                         [](ExperimentConfig& c, const std::size_t& v) { c.train.m_per_class = v; });
  flags.add<Sizes>(app, "--trunk-dims", "trunk layer widths, comma separated",
                   [](ExperimentConfig& c, const Sizes& v) { c.train.trunk_dims = v; })
      ->delimiter(',');
  flags.add<std::size_t>(app, "--fc-dim", "FC layer width",
                         [](ExperimentConfig& c, const std::size_t& v) { c.train.fc_dim = v; });
  flags.add<std::size_t>(app, "--emb-dim", "embedding width",
                         [](ExperimentConfig& c, const std::size_t& v) { c.train.emb_dim = v; });
}

void add_eval_flags(CLI::App* app, FlagSet& flags) {
  flags.add<Sizes>(app, "--ks", "Recall@K cutoffs, comma separated",
                   [](ExperimentConfig& c, const Sizes& v) { c.ks = v; })
      ->delimiter(',');
  flags.add<Names>(app, "--layers", "emb,fc,trunk", [](ExperimentConfig& c, const Names& v) {
       c.layers.clear();
       for (const auto& name : v) c.layers.push_back(feature_layer_from_string(name));
     })
      ->delimiter(',');
  flags.add<std::string>(app, "--mode", "separate|leave-one-out", [](ExperimentConfig& c, const std::string& v) {
    c.mode = retrieval_mode_from_string(v);
  });
}

struct Common {
  std::string config_path;
  std::string out_dir = "out";
};

void add_common(CLI::App* app, Common& common, FlagSet& flags) {
  app->add_option("--config", common.config_path, "JSON config file (flags override it)");
  app->add_option("--out", common.out_dir, "output directory")->capture_default_str();
  flags.add<std::uint64_t>(app, "--seed", "seed for every random stream",
                           [](ExperimentConfig& c, const std::uint64_t& v) { c.seed = v; });
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Semantic granularity metric learning: data, training, retrieval evaluation"};
  app.name(args.empty() ? "sgml" : args.front());
  app.require_subcommand(1, 1);

  Common common;
  FlagSet flags;
  std::string checkpoint_path;

  auto* gen = app.add_subcommand("gen-data", "generate and split a synthetic dataset");
  add_common(gen, common, flags);
  add_data_flags(gen, flags);

  auto* trn = app.add_subcommand("train", "train a network and write a checkpoint");
  add_common(trn, common, flags);
  add_data_flags(trn, flags);
  add_train_flags(trn, flags);
  add_eval_flags(trn, flags);

  auto* evl = app.add_subcommand("eval", "Recall@K of a checkpoint");
  add_common(evl, common, flags);
  add_data_flags(evl, flags);
  add_eval_flags(evl, flags);
  evl->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();

  auto* swp = app.add_subcommand("sweep", "Recall@1 over an alpha x beta grid");
  add_common(swp, common, flags);
  add_data_flags(swp, flags);
  add_train_flags(swp, flags);
  add_eval_flags(swp, flags);
  flags.add<Reals>(swp, "--alphas", "alpha grid, comma separated",
                   [](ExperimentConfig& c, const Reals& v) { c.alphas = v; })
      ->delimiter(',');
  flags.add<Reals>(swp, "--betas", "beta grid, comma separated",
                   [](ExperimentConfig& c, const Reals& v) { c.betas = v; })
      ->delimiter(',');

  auto* abl = app.add_subcommand("ablate", "compare the four training variants");
  add_common(abl, common, flags);
  add_data_flags(abl, flags);
  add_train_flags(abl, flags);
  add_eval_flags(abl, flags);

  auto* grc = app.add_subcommand("gradcheck", "finite-difference check of every derivative");
  add_common(grc, common, flags);
  flags.add<std::size_t>(grc, "--scalar-cases", "random scalar cases per check",
                         [](ExperimentConfig& c, const std::size_t& v) { c.gradcheck.scalar_cases = v; });
  flags.add<std::size_t>(grc, "--network-cases", "random networks per variant",
                         [](ExperimentConfig& c, const std::size_t& v) { c.gradcheck.network_cases = v; });
  flags.add_flag(grc, "--inject-fault", "negate one analytic derivative per family",
                 [](ExperimentConfig& c) { c.gradcheck.inject_sign_flip = true; });

  std::vector<std::string> reversed(args.begin() + (args.empty() ? 0 : 1), args.end());
  std::reverse(reversed.begin(), reversed.end());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    ExperimentConfig config;
    if (!common.config_path.empty()) config = experiment_config_from_json(read_text(common.config_path));
    flags.apply(config);
    config.apply_seed();
    const fs::path out_dir = common.out_dir;

    if (gen->parsed()) {
      out << cmd_gen_data(config, out_dir).summary;
    } else if (trn->parsed()) {
      const auto r = cmd_train(config, out_dir);
      const auto& steps = r.result.history.steps;
      out << steps.size() << " steps";
      if (!steps.empty()) out << ", final total loss " << format_real(steps.back().total_loss);
      out << "\nwrote " << r.checkpoint_file.string() << " and " << r.history_file.string() << "\n";
    } else if (evl->parsed()) {
      out << recall_table(cmd_eval(config, checkpoint_path, out_dir).reports);
    } else if (swp->parsed()) {
      const auto r = cmd_sweep(config, out_dir);
      char buf[96];
      out << "alpha    beta     R@1\n";
      for (const auto& row : r.rows) {
        std::snprintf(buf, sizeof buf, "%-8.4f %-8.4f %.4f\n", row.alpha, row.beta, row.recall_at_1);
        out << buf;
      }
    } else if (abl->parsed()) {
      out << ablation_table(cmd_ablate(config, out_dir).rows);
    } else if (grc->parsed()) {
      const auto r = cmd_gradcheck(config, out_dir);
      out << r.report.to_text();
      if (!r.report.passed()) {
        err << "gradient check failed\n";
        return 1;
      }
    }
  } catch (const TrainingAborted& e) {
    err << "error: training aborted: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace sgml::cli
