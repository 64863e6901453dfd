#pragma once

// Versioned JSON run configuration. Unknown keys are rejected at every
// level so typos fail loudly instead of silently running defaults.

#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "fdr/losses.hpp"
#include "fdr/optim.hpp"

namespace fdr {

inline constexpr int kConfigVersion = 1;

struct RunConfig {
  TrainConfig train;
  bool additive_forwarding = true;
  bool residual_learning = true;
  bool deep_supervision = true;
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& obj,
                                const std::set<std::string>& known,
                                const std::string& where) {
  for (const auto& [key, _] : obj.items())
    if (!known.contains(key))
      throw std::invalid_argument("config: unknown key \"" + key + "\" in " +
                                  where);
}

template <typename T>
void read_key(const nlohmann::json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
  if (!j.is_object())
    throw std::invalid_argument("config: top level must be a JSON object");
  detail::reject_unknown_keys(j, {"version", "preset", "loss", "train"},
                              "the top level");
  if (!j.contains("version"))
    throw std::invalid_argument("config: missing \"version\"");
  if (j.at("version").get<int>() != kConfigVersion)
    throw std::invalid_argument("config: unsupported version");

  RunConfig cfg;
  if (j.contains("preset")) {
    const std::string preset = j.at("preset").get<std::string>();
    if (preset == "paper")
      cfg.train.weights = paper_weights();
    else if (preset == "desk")
      cfg.train.weights = desk_weights();
    else
      throw std::invalid_argument("config: unknown preset \"" + preset +
                                  "\" (expected \"paper\" or \"desk\")");
  }

  if (j.contains("loss")) {
    const auto& l = j.at("loss");
    detail::reject_unknown_keys(l,
                                {"alpha1", "alpha2", "alpha3", "c1", "c2",
                                 "window_n", "lncc_mean"},
                                "\"loss\"");
    LossWeights& w = cfg.train.weights;
    detail::read_key(l, "alpha1", w.alpha1);
    detail::read_key(l, "alpha2", w.alpha2);
    detail::read_key(l, "alpha3", w.alpha3);
    detail::read_key(l, "c1", w.c1);
    detail::read_key(l, "c2", w.c2);
    detail::read_key(l, "window_n", w.window_n);
    detail::read_key(l, "lncc_mean", w.lncc_mean);
    w.validate();
  }

  if (j.contains("train")) {
    const auto& t = j.at("train");
    detail::reject_unknown_keys(
        t,
        {"beta1", "beta2", "lr0", "lr_decay", "decay_every", "lr_floor",
         "epochs", "seed", "grad_clip_norm", "grad_clip", "val_every",
         "additive_forwarding", "residual_learning", "deep_supervision"},
        "\"train\"");
    TrainConfig& c = cfg.train;
    detail::read_key(t, "beta1", c.beta1);
    detail::read_key(t, "beta2", c.beta2);
    detail::read_key(t, "lr0", c.lr0);
    detail::read_key(t, "lr_decay", c.lr_decay);
    detail::read_key(t, "decay_every", c.decay_every);
    detail::read_key(t, "lr_floor", c.lr_floor);
    detail::read_key(t, "epochs", c.epochs);
    detail::read_key(t, "seed", c.seed);
    detail::read_key(t, "grad_clip_norm", c.grad_clip_norm);
    detail::read_key(t, "grad_clip", c.grad_clip);
    detail::read_key(t, "val_every", c.val_every);
    detail::read_key(t, "additive_forwarding", cfg.additive_forwarding);
    detail::read_key(t, "residual_learning", cfg.residual_learning);
    detail::read_key(t, "deep_supervision", cfg.deep_supervision);
    c.validate();
  }
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in)
    throw std::invalid_argument("config: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config: " + path + ": " + e.what());
  }
  return parse_run_config(j);
}

}  // namespace fdr
