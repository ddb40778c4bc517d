#include "sgml/checkpoint.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "sgml/errors.hpp"

namespace sgml {

using nlohmann::ordered_json;

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

ordered_json shape_to_json(const NetworkShape& s) {
  return ordered_json{{"input_dim", s.input_dim}, {"trunk_dims", s.trunk_dims}, {"fc_dim", s.fc_dim},
                      {"emb_dim", s.emb_dim},     {"attr_dim", s.attr_dim}};
}

NetworkShape shape_from_json(const ordered_json& j) {
  NetworkShape s;
  s.input_dim = j.at("input_dim").get<std::size_t>();
  s.trunk_dims = j.at("trunk_dims").get<std::vector<std::size_t>>();
  s.fc_dim = j.at("fc_dim").get<std::size_t>();
  s.emb_dim = j.at("emb_dim").get<std::size_t>();
  s.attr_dim = j.at("attr_dim").get<std::size_t>();
  return s;
}

ordered_json layer_to_json(const DenseLayer& l) {
  ordered_json weight = ordered_json::array();
  for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
    ordered_json row = ordered_json::array();
    for (Eigen::Index c = 0; c < l.weight.cols(); ++c) row.push_back(l.weight(r, c));
    weight.push_back(std::move(row));
  }
  ordered_json bias = ordered_json::array();
  for (Eigen::Index i = 0; i < l.bias.size(); ++i) bias.push_back(l.bias[i]);
  return ordered_json{{"weight", std::move(weight)}, {"bias", std::move(bias)}};
}

void layer_from_json(const ordered_json& j, DenseLayer& l, const std::string& where) {
  const auto& weight = j.at("weight");
  const auto& bias = j.at("bias");
  if (weight.size() != static_cast<std::size_t>(l.weight.rows()) ||
      bias.size() != static_cast<std::size_t>(l.bias.size())) {
    throw ParseError("checkpoint: layer " + where + " does not match the stored shape");
  }
  for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
    const auto& row = weight[static_cast<std::size_t>(r)];
    if (row.size() != static_cast<std::size_t>(l.weight.cols())) {
      throw ParseError("checkpoint: layer " + where + " row width does not match the stored shape");
    }
    for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = bias[static_cast<std::size_t>(i)].get<double>();
}

ordered_json params_to_json(const NetworkParams& p) {
  ordered_json trunk = ordered_json::array();
  for (const auto& l : p.trunk) trunk.push_back(layer_to_json(l));
  return ordered_json{{"trunk", std::move(trunk)},
                      {"fc", layer_to_json(p.fc)},
                      {"emb", layer_to_json(p.emb)},
                      {"attr", layer_to_json(p.attr)}};
}

NetworkParams params_from_json(const ordered_json& j, const NetworkShape& shape) {
  NetworkParams p = NetworkParams::zeros(shape);
  const auto& trunk = j.at("trunk");
  if (trunk.size() != p.trunk.size()) throw ParseError("checkpoint: trunk depth does not match the stored shape");
  for (std::size_t i = 0; i < p.trunk.size(); ++i) layer_from_json(trunk[i], p.trunk[i], "trunk[" + std::to_string(i) + "]");
  layer_from_json(j.at("fc"), p.fc, "fc");
  layer_from_json(j.at("emb"), p.emb, "emb");
  layer_from_json(j.at("attr"), p.attr, "attr");
  if (!p.all_finite()) throw ParseError("checkpoint: non-finite parameter");
  return p;
}

}  // namespace

std::string checkpoint_to_json(const Checkpoint& ck) {
  const auto& opt = ck.optimizer;
  ordered_json j;
  j["format"] = kCheckpointFormat;
  j["shape"] = shape_to_json(ck.params.shape);
  j["step"] = opt.step;
  j["config_hash"] = ck.config_hash;
  j["config"] = ordered_json::parse(ck.config_json);
  j["params"] = params_to_json(ck.params);
  j["optimizer"] = ordered_json{{"learning_rate", opt.config.learning_rate},
                                {"beta1", opt.config.beta1},
                                {"beta2", opt.config.beta2},
                                {"epsilon", opt.config.epsilon},
                                {"step", opt.step},
                                {"m", params_to_json(opt.m)},
                                {"v", params_to_json(opt.v)}};
  return j.dump() + "\n";
}

Checkpoint checkpoint_from_json(const std::string& text) {
  try {
    const ordered_json j = ordered_json::parse(text);
    if (j.value("format", std::string()) != kCheckpointFormat) {
      throw ParseError(std::string("checkpoint: expected format ") + kCheckpointFormat);
    }
    Checkpoint ck;
    const NetworkShape shape = shape_from_json(j.at("shape"));
    shape.validate();
    ck.params = params_from_json(j.at("params"), shape);
    const auto& o = j.at("optimizer");
    AdamConfig cfg;
    cfg.learning_rate = o.at("learning_rate").get<double>();
    cfg.beta1 = o.at("beta1").get<double>();
    cfg.beta2 = o.at("beta2").get<double>();
    cfg.epsilon = o.at("epsilon").get<double>();
    ck.optimizer = OptimizerState::for_params(ck.params, cfg);
    ck.optimizer.step = o.at("step").get<std::uint64_t>();
    ck.optimizer.m = params_from_json(o.at("m"), shape);
    ck.optimizer.v = params_from_json(o.at("v"), shape);
    ck.config_json = j.at("config").dump();
    ck.config_hash = j.at("config_hash").get<std::uint64_t>();
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << checkpoint_to_json(checkpoint);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str());
}

}  // namespace sgml
