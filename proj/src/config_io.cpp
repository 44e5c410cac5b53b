#include "sstsne/config_io.hpp"

namespace sstsne {

namespace {

template <typename T>
void read(const nlohmann::json& doc, const char* key, T& out) {
  const auto it = doc.find(key);
  if (it == doc.end() || it->is_null()) return;
  try {
    out = it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("config key '") + key + "' has the wrong type");
  }
}

}  // namespace

void update_from_json(TsneConfig& c, const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  read(doc, "out_dims", c.out_dims);
  read(doc, "perplexity", c.perplexity);
  read(doc, "theta", c.theta);
  read(doc, "theta_k", c.theta_k);
  read(doc, "f", c.f);
  read(doc, "r", c.r);
  read(doc, "s", c.s);
  read(doc, "ramp_epochs", c.ramp_epochs);
  read(doc, "e_max", c.e_max);
  read(doc, "eta", c.eta);
  read(doc, "alpha_hi", c.alpha_hi);
  read(doc, "alpha_lo", c.alpha_lo);
  read(doc, "alpha_start", c.alpha_epochs.first);
  read(doc, "alpha_stop", c.alpha_epochs.second);
  read(doc, "momentum_lo", c.momentum_lo);
  read(doc, "momentum_hi", c.momentum_hi);
  read(doc, "seed", c.seed);
  if (const auto it = doc.find("init"); it != doc.end()) {
    const std::string mode = it->get<std::string>();
    if (mode == "pca")
      c.init_mode = InitMode::pca;
    else if (mode == "random")
      c.init_mode = InitMode::random;
    else
      throw ConfigError("init must be 'pca' or 'random'");
  }
}

void update_from_json(ALConfig& c, const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  read(doc, "epochs_per_round", c.epochs_per_round);
  read(doc, "batch", c.batch);
  read(doc, "budget", c.budget);
  read(doc, "reference_epochs", c.reference_epochs);
  read(doc, "seed", c.seed);
  read(doc, "jobs", c.jobs);
}

nlohmann::json to_json(const TsneConfig& c) {
  return {{"out_dims", c.out_dims},
          {"perplexity", c.perplexity},
          {"theta", c.theta},
          {"theta_k", c.theta_k},
          {"f", c.f},
          {"r", c.r},
          {"s", c.s},
          {"ramp_epochs", c.ramp_epochs},
          {"e_max", c.e_max},
          {"eta", c.eta},
          {"alpha_hi", c.alpha_hi},
          {"alpha_lo", c.alpha_lo},
          {"alpha_start", c.alpha_epochs.first},
          {"alpha_stop", c.alpha_epochs.second},
          {"momentum_lo", c.momentum_lo},
          {"momentum_hi", c.momentum_hi},
          {"seed", c.seed},
          {"init", c.init_mode == InitMode::pca ? "pca" : "random"}};
}

nlohmann::json to_json(const ALConfig& c) {
  return {{"epochs_per_round", c.epochs_per_round},
          {"batch", c.batch},
          {"budget", c.budget},
          {"reference_epochs", c.reference_epochs},
          {"seed", c.seed},
          {"jobs", c.jobs}};
}

}  // namespace sstsne
