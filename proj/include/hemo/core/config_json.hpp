#pragma once

#include <json.hpp>
#include <set>
#include <string>

#include "hemo/insilico/insilico.hpp"
#include "hemo/sigproc/sigproc.hpp"

namespace hemo {

// Configuration errors map to their own CLI exit code.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require_keys(const nlohmann::json& j,
                         const std::set<std::string>& allowed,
                         const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) {
      throw ConfigError("unknown key '" + k + "' in " + where);
    }
  }
}

inline nlohmann::json to_json(const insilico::PriorSpec& p) {
  return nlohmann::json{{"hr", p.hr}, {"sv", p.sv}, {"pft", p.pft}, {"svr", p.svr}};
}

inline insilico::PriorSpec prior_from_json(const nlohmann::json& j) {
  require_keys(j, {"hr", "sv", "pft", "svr"}, "prior");
  insilico::PriorSpec p;
  if (j.contains("hr")) p.hr = j.at("hr").get<std::array<double, 2>>();
  if (j.contains("sv")) p.sv = j.at("sv").get<std::array<double, 2>>();
  if (j.contains("pft")) p.pft = j.at("pft").get<std::array<double, 2>>();
  if (j.contains("svr")) p.svr = j.at("svr").get<std::array<double, 2>>();
  p.validate();
  return p;
}

inline nlohmann::json to_json(const insilico::NoiseSpec& n) {
  return nlohmann::json{{"sigma_gauss", n.sigma_gauss},
                        {"sigma_red", n.sigma_red},
                        {"red_exponent", n.red_exponent}};
}

inline insilico::NoiseSpec noise_from_json(const nlohmann::json& j) {
  require_keys(j, {"sigma_gauss", "sigma_red", "red_exponent"}, "noise");
  insilico::NoiseSpec n;
  n.sigma_gauss = j.value("sigma_gauss", n.sigma_gauss);
  n.sigma_red = j.value("sigma_red", n.sigma_red);
  n.red_exponent = j.value("red_exponent", n.red_exponent);
  if (n.sigma_gauss < 0.0 || n.sigma_red < 0.0) {
    throw ConfigError("noise sigmas must be >= 0");
  }
  return n;
}

inline nlohmann::json to_json(const sigproc::FilterSpec& f) {
  return nlohmann::json{{"low_hz", f.low_hz},
                        {"high_hz", f.high_hz},
                        {"order", f.order},
                        {"zero_phase", f.zero_phase}};
}

inline sigproc::FilterSpec filter_from_json(const nlohmann::json& j) {
  require_keys(j, {"low_hz", "high_hz", "order", "zero_phase"}, "filter");
  sigproc::FilterSpec f;
  f.low_hz = j.value("low_hz", f.low_hz);
  f.high_hz = j.value("high_hz", f.high_hz);
  f.order = j.value("order", f.order);
  f.zero_phase = j.value("zero_phase", f.zero_phase);
  try {
    f.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return f;
}

}  // namespace hemo
