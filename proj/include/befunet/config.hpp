#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "befunet/model.hpp"

namespace befunet {

// Flat "key = value" run configuration with '#' comments, no nesting.
// The `profile` key (desk | paper) selects the default set; explicit keys
// override it. Unknown keys are rejected. The BEFUNET_SEED environment
// variable overrides the seed from the file.
struct RunConfig {
  std::string profile = "desk";
  ModelConfig model;
  int epochs = 30;
  int batch_size = 8;
  double lr = 1e-3;
  double weight_decay = 0.01;
  std::uint64_t seed = 42;
  std::string train_manifest;
  std::string val_manifest;
  std::string out_dir = "runs";

  static RunConfig desk() { return RunConfig{}; }

  static RunConfig paper() {
    RunConfig c;
    c.profile = "paper";
    c.model = ModelConfig::paper();
    c.epochs = 80;
    c.batch_size = 24;
    c.lr = 0.01;
    return c;
  }
};

namespace detail_config {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

inline int to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const int out = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return out;
  } catch (...) {
    throw ConfigError("config key '" + key + "': not an integer: " + v);
  }
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return out;
  } catch (...) {
    throw ConfigError("config key '" + key + "': not a number: " + v);
  }
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': not a boolean: " + v);
}

inline std::array<int, 4> to_int4(const std::string& key, const std::string& v) {
  std::array<int, 4> out{};
  std::stringstream ss(v);
  std::string part;
  int i = 0;
  while (std::getline(ss, part, ',')) {
    if (i >= 4) throw ConfigError("config key '" + key + "': expected 4 values");
    out[static_cast<std::size_t>(i++)] = to_int(key, trim(part));
  }
  if (i != 4) throw ConfigError("config key '" + key + "': expected 4 values");
  return out;
}

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail_config

inline RunConfig parse_run_config(const std::string& text) {
  using namespace detail_config;
  std::vector<std::pair<std::string, std::string>> kv;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected key = value");
    kv.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }

  RunConfig cfg;
  for (const auto& [k, v] : kv)
    if (k == "profile") {
      if (v == "desk") cfg = RunConfig::desk();
      else if (v == "paper") cfg = RunConfig::paper();
      else throw ConfigError("config key 'profile': must be desk or paper, got " + v);
    }

  for (const auto& [k, v] : kv) {
    if (k == "profile") continue;
    else if (k == "height") cfg.model.height = to_int(k, v);
    else if (k == "width") cfg.model.width = to_int(k, v);
    else if (k == "base_dim") cfg.model.base_dim = to_int(k, v);
    else if (k == "patch") cfg.model.patch = to_int(k, v);
    else if (k == "window") cfg.model.window = to_int(k, v);
    else if (k == "lca_h") cfg.model.lca_h = to_int(k, v);
    else if (k == "lca_w") cfg.model.lca_w = to_int(k, v);
    else if (k == "depths") cfg.model.depths = to_int4(k, v);
    else if (k == "heads") cfg.model.heads = to_int4(k, v);
    else if (k == "dlf_s_depth") cfg.model.dlf_s_depth = to_int(k, v);
    else if (k == "dlf_l_depth") cfg.model.dlf_l_depth = to_int(k, v);
    else if (k == "dlf_heads") cfg.model.dlf_heads = to_int(k, v);
    else if (k == "classes") cfg.model.num_classes = to_int(k, v);
    else if (k == "use_edge_encoder") cfg.model.use_edge_encoder = to_bool(k, v);
    else if (k == "use_lcaf") cfg.model.use_lcaf = to_bool(k, v);
    else if (k == "use_dlf") cfg.model.use_dlf = to_bool(k, v);
    else if (k == "lcaf_residual") {
      if (v == "body") cfg.model.lcaf_residual = LcafResidual::kBody;
      else if (v == "edge") cfg.model.lcaf_residual = LcafResidual::kEdge;
      else if (v == "sum") cfg.model.lcaf_residual = LcafResidual::kSum;
      else throw ConfigError("config key 'lcaf_residual': body|edge|sum, got " + v);
    } else if (k == "dlf_inject") {
      if (v == "add") cfg.model.dlf_inject = DlfInject::kAdd;
      else if (v == "concat-project") cfg.model.dlf_inject = DlfInject::kConcatProject;
      else throw ConfigError("config key 'dlf_inject': add|concat-project, got " + v);
    } else if (k == "rel_pos_bias") cfg.model.rel_pos_bias = to_bool(k, v);
    else if (k == "lambda1") cfg.model.lambda1 = to_double(k, v);
    else if (k == "lambda2") cfg.model.lambda2 = to_double(k, v);
    else if (k == "gamma") cfg.model.gamma = to_double(k, v);
    else if (k == "edge_lambda") cfg.model.edge_lambda = to_double(k, v);
    else if (k == "eta") cfg.model.eta = to_double(k, v);
    else if (k == "epochs") cfg.epochs = to_int(k, v);
    else if (k == "batch_size") cfg.batch_size = to_int(k, v);
    else if (k == "lr") cfg.lr = to_double(k, v);
    else if (k == "weight_decay") cfg.weight_decay = to_double(k, v);
    else if (k == "seed") {
      try {
        cfg.seed = static_cast<std::uint64_t>(std::stoull(v));
      } catch (...) {
        throw ConfigError("config key 'seed': not an integer: " + v);
      }
    }
    else if (k == "train_manifest") cfg.train_manifest = v;
    else if (k == "val_manifest") cfg.val_manifest = v;
    else if (k == "out_dir") cfg.out_dir = v;
    else throw ConfigError("unknown config key '" + k + "'");
  }

  cfg.model.validate();
  if (cfg.epochs < 1) throw ConfigError("config key 'epochs': must be >= 1");
  if (cfg.batch_size < 1) throw ConfigError("config key 'batch_size': must be >= 1");
  if (cfg.lr <= 0) throw ConfigError("config key 'lr': must be positive");
  if (cfg.weight_decay < 0) throw ConfigError("config key 'weight_decay': must be >= 0");
  return cfg;
}

inline std::string serialize_run_config(const RunConfig& c) {
  using detail_config::fmt_double;
  std::string s;
  auto kv = [&s](const std::string& k, const std::string& v) { s += k + " = " + v + "\n"; };
  kv("profile", c.profile);
  kv("height", std::to_string(c.model.height));
  kv("width", std::to_string(c.model.width));
  kv("base_dim", std::to_string(c.model.base_dim));
  kv("patch", std::to_string(c.model.patch));
  kv("window", std::to_string(c.model.window));
  kv("lca_h", std::to_string(c.model.lca_h));
  kv("lca_w", std::to_string(c.model.lca_w));
  kv("depths", std::to_string(c.model.depths[0]) + "," + std::to_string(c.model.depths[1]) +
                   "," + std::to_string(c.model.depths[2]) + "," +
                   std::to_string(c.model.depths[3]));
  kv("heads", std::to_string(c.model.heads[0]) + "," + std::to_string(c.model.heads[1]) +
                  "," + std::to_string(c.model.heads[2]) + "," +
                  std::to_string(c.model.heads[3]));
  kv("dlf_s_depth", std::to_string(c.model.dlf_s_depth));
  kv("dlf_l_depth", std::to_string(c.model.dlf_l_depth));
  kv("dlf_heads", std::to_string(c.model.dlf_heads));
  kv("classes", std::to_string(c.model.num_classes));
  kv("use_edge_encoder", c.model.use_edge_encoder ? "true" : "false");
  kv("use_lcaf", c.model.use_lcaf ? "true" : "false");
  kv("use_dlf", c.model.use_dlf ? "true" : "false");
  kv("lcaf_residual", c.model.lcaf_residual == LcafResidual::kBody   ? "body"
                      : c.model.lcaf_residual == LcafResidual::kEdge ? "edge"
                                                                     : "sum");
  kv("dlf_inject",
     c.model.dlf_inject == DlfInject::kAdd ? "add" : "concat-project");
  kv("rel_pos_bias", c.model.rel_pos_bias ? "true" : "false");
  kv("lambda1", fmt_double(c.model.lambda1));
  kv("lambda2", fmt_double(c.model.lambda2));
  kv("gamma", fmt_double(c.model.gamma));
  kv("edge_lambda", fmt_double(c.model.edge_lambda));
  kv("eta", fmt_double(c.model.eta));
  kv("epochs", std::to_string(c.epochs));
  kv("batch_size", std::to_string(c.batch_size));
  kv("lr", fmt_double(c.lr));
  kv("weight_decay", fmt_double(c.weight_decay));
  kv("seed", std::to_string(c.seed));
  if (!c.train_manifest.empty()) kv("train_manifest", c.train_manifest);
  if (!c.val_manifest.empty()) kv("val_manifest", c.val_manifest);
  kv("out_dir", c.out_dir);
  return s;
}

// File loader; applies the BEFUNET_SEED override.
inline RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  RunConfig cfg = parse_run_config(ss.str());
  if (const char* env = std::getenv("BEFUNET_SEED")) {
    try {
      cfg.seed = static_cast<std::uint64_t>(std::stoull(env));
    } catch (...) {
      throw ConfigError("BEFUNET_SEED is not an integer: " + std::string(env));
    }
  }
  return cfg;
}

}  // namespace befunet
