// Copyright 2026 The LMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "lmoe/bench/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "lmoe/core/error.hpp"

namespace lmoe::bench {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
bool parse_int(const std::string& v, T& out) {
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  return ec == std::errc() && p == end;
}

bool parse_real(const std::string& v, double& out) {
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  return ec == std::errc() && p == end;
}

template <typename T>
bool parse_list(const std::string& v, std::vector<T>& out) {
  std::vector<T> items;
  std::stringstream ss(v);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    T x{};
    if (!parse_int(trim(tok), x)) return false;
    items.push_back(x);
  }
  if (items.empty()) return false;
  out = std::move(items);
  return true;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string real_str(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

struct Field {
  std::function<bool(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define LMOE_INT(key, member)                                                  \
  {key, {[](RunConfig& c, const std::string& v) { return parse_int(v, c.member); }, \
         [](const RunConfig& c) { return std::to_string(c.member); }}}
#define LMOE_REAL(key, member)                                                  \
  {key, {[](RunConfig& c, const std::string& v) { return parse_real(v, c.member); }, \
         [](const RunConfig& c) { return real_str(c.member); }}}
#define LMOE_LIST(key, member)                                                   \
  {key, {[](RunConfig& c, const std::string& v) { return parse_list(v, c.member); }, \
         [](const RunConfig& c) { return join(c.member); }}}

// Ordered, so format_config is stable.
const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> kFields{
      {"data.path", {[](RunConfig& c, const std::string& v) {
                       c.data_path = v;
                       return !v.empty();
                     },
                     [](const RunConfig& c) { return c.data_path; }}},
      LMOE_INT("data.tasks", data_tasks),
      LMOE_INT("data.demos", data_demos),
      LMOE_INT("data.seed", data_seed),
      LMOE_INT("model.d_tok", d_tok),
      LMOE_INT("model.lcvr_layers", lcvr_layers),
      LMOE_INT("model.lcvr_heads", lcvr_heads),
      LMOE_INT("model.lcvr_kv_groups", lcvr_kv_groups),
      LMOE_INT("model.lcvr_ffn", lcvr_ffn),
      LMOE_INT("model.width", width),
      LMOE_INT("model.layers", layers),
      LMOE_INT("model.heads", heads),
      LMOE_INT("model.kv_groups", kv_groups),
      LMOE_INT("model.ffn_hidden", ffn_hidden),
      LMOE_INT("model.experts", experts),
      LMOE_INT("model.components", components),
      LMOE_INT("model.expert_hidden", expert_hidden),
      LMOE_INT("model.horizon", horizon),
      LMOE_INT("model.diffusion_steps", diffusion_steps),
      LMOE_INT("model.inference_steps", inference_steps),
      LMOE_REAL("model.sigma_min", sigma_min),
      LMOE_REAL("model.aux_alpha", aux_alpha),
      LMOE_REAL("model.aux_beta", aux_beta),
      LMOE_INT("train.steps", steps),
      LMOE_INT("train.batch", batch),
      LMOE_REAL("train.lr", lr),
      {"train.famo", {[](RunConfig& c, const std::string& v) {
                        if (v == "true" || v == "1") c.famo = true;
                        else if (v == "false" || v == "0") c.famo = false;
                        else return false;
                        return true;
                      },
                      [](const RunConfig& c) { return std::string(c.famo ? "true" : "false"); }}},
      LMOE_REAL("train.grad_clip", grad_clip),
      LMOE_REAL("train.ema", ema),
      LMOE_INT("train.log_every", log_every),
      LMOE_INT("train.val_samples", val_samples),
      LMOE_INT("eval.trials", eval_trials),
      LMOE_LIST("grid.experts", grid_experts),
      LMOE_LIST("grid.components", grid_components),
      LMOE_LIST("run.seeds", seeds),
  };
  return kFields;
}

#undef LMOE_INT
#undef LMOE_REAL
#undef LMOE_LIST

std::string key_list(const std::vector<std::string>& keys) {
  std::string s;
  for (std::size_t i = 0; i < keys.size(); ++i) s += (i ? ", " : "") + keys[i];
  return s;
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  std::map<std::string, const Field*> index;
  for (const auto& [k, f] : fields()) index[k] = &f;
  RunConfig cfg;
  std::vector<std::string> unknown, bad;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      bad.push_back("line " + std::to_string(lineno) + " (missing '=')");
      continue;
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto it = index.find(key);
    if (it == index.end()) {
      unknown.push_back(key);
    } else if (!it->second->set(cfg, value)) {
      bad.push_back(key + " = '" + value + "'");
    }
  }
  if (!unknown.empty() || !bad.empty()) {
    std::string msg = "invalid config:";
    if (!unknown.empty()) msg += " unknown keys [" + key_list(unknown) + "]";
    if (!bad.empty()) msg += " bad values [" + key_list(bad) + "]";
    throw ConfigError(msg);
  }
  validate(cfg);
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& [k, f] : fields()) out += k + " = " + f.get(cfg) + "\n";
  return out;
}

void validate(const RunConfig& c) {
  std::vector<std::string> bad;
  auto require = [&](bool ok, const char* key) {
    if (!ok) bad.emplace_back(key);
  };
  require(c.data_tasks >= 1 && c.data_tasks <= 5, "data.tasks");
  require(c.data_demos >= 1, "data.demos");
  require(c.d_tok >= 2 && c.d_tok % 2 == 0, "model.d_tok");
  require(c.lcvr_heads >= 1 && c.d_tok % c.lcvr_heads == 0 && (c.d_tok / c.lcvr_heads) % 2 == 0,
          "model.lcvr_heads");
  require(c.lcvr_kv_groups >= 1 && c.lcvr_heads % c.lcvr_kv_groups == 0, "model.lcvr_kv_groups");
  require(c.lcvr_layers >= 1, "model.lcvr_layers");
  require(c.lcvr_ffn >= 1, "model.lcvr_ffn");
  require(c.width >= 2, "model.width");
  require(c.heads >= 1 && c.width % c.heads == 0 && (c.width / c.heads) % 2 == 0, "model.heads");
  require(c.kv_groups >= 1 && c.heads % c.kv_groups == 0, "model.kv_groups");
  require(c.layers >= 1, "model.layers");
  require(c.ffn_hidden >= 1, "model.ffn_hidden");
  require(c.experts >= 1, "model.experts");
  require(c.components >= 1, "model.components");
  require(c.expert_hidden >= 1, "model.expert_hidden");
  require(c.horizon >= 1, "model.horizon");
  require(c.diffusion_steps >= 1, "model.diffusion_steps");
  require(c.inference_steps >= 1 && c.inference_steps <= c.diffusion_steps,
          "model.inference_steps");
  require(c.sigma_min > 0.0, "model.sigma_min");
  require(c.aux_alpha >= 0.0, "model.aux_alpha");
  require(c.aux_beta >= 0.0, "model.aux_beta");
  require(c.steps >= 1, "train.steps");
  require(c.batch >= 1, "train.batch");
  require(c.lr > 0.0, "train.lr");
  require(c.grad_clip >= 0.0, "train.grad_clip");
  require(c.ema >= 0.0 && c.ema < 1.0, "train.ema");
  require(c.log_every >= 1, "train.log_every");
  require(c.val_samples >= 1, "train.val_samples");
  require(c.eval_trials >= 1, "eval.trials");
  if (!bad.empty()) throw ConfigError("invalid config values for keys: " + key_list(bad));
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  if (!parse_list(text, out)) throw ConfigError("invalid seed list '" + text + "'");
  return out;
}

}  // namespace lmoe::bench
