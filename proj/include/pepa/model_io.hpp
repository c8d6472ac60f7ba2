#pragma once

#include <json.hpp>

#include <Eigen/Dense>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pepa/equilibrium.hpp"
#include "pepa/errors.hpp"
#include "pepa/market.hpp"
#include "pepa/risk.hpp"

// Model-file schema (JSON, schema_version 1) and deterministic
// serialization. Parsing is strict: unknown fields are rejected at every
// level so fixture typos never pass silently. Saved files reproduce every
// double exactly (shortest round-trip decimal); result records printed by
// the CLI use a fixed 12-significant-digit format instead, which makes
// byte-identical reruns possible.

namespace pepa {

struct SolverConfig {
  double inner_gradient_tol = 1e-11;
  double outer_gradient_tol = 1e-9;
  double foc_tol = 1e-6;
  double clearing_tol = 1e-6;
  int max_iterations = 800;
  double divergence_bound = 1e6;

  RiskSolveOptions risk_options() const {
    RiskSolveOptions opts;
    opts.inner_tol = inner_gradient_tol;
    return opts;
  }

  PepaOptions pepa_options() const {
    PepaOptions opts;
    opts.grad_tol = outer_gradient_tol;
    opts.max_iterations = max_iterations;
    opts.foc_tol = foc_tol;
    opts.clearing_tol = clearing_tol;
    opts.divergence_bound = divergence_bound;
    opts.risk = risk_options();
    return opts;
  }

  bool operator==(const SolverConfig&) const = default;
};

struct ModelFile {
  int schema_version = 1;
  FiniteMarket market;
  std::vector<std::string> asset_names;
  std::vector<RiskModel> agents;
  Bundle bundle;
  std::vector<std::string> claim_names;
  SolverConfig solver;
  std::vector<std::string> warnings;  // filled by load, not serialized
};

namespace jsonio {

using Json = nlohmann::ordered_json;

inline std::string format_double(double v, bool shortest) {
  if (!std::isfinite(v)) throw Error("non-finite number in JSON output");
  char buf[40];
  if (shortest) {
    for (int prec = 15; prec <= 17; ++prec) {
      std::snprintf(buf, sizeof buf, "%.*g", prec, v);
      if (std::strtod(buf, nullptr) == v) break;
    }
  } else {
    std::snprintf(buf, sizeof buf, "%.12g", v);
  }
  return buf;
}

inline void emit(const Json& j, bool shortest, int depth, std::string& out) {
  const std::string pad(2 * depth, ' ');
  const std::string pad_in(2 * (depth + 1), ' ');
  switch (j.type()) {
    case Json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ",\n";
        first = false;
        out += pad_in + Json(it.key()).dump() + ": ";
        emit(it.value(), shortest, depth + 1, out);
      }
      out += "\n" + pad + "}";
      return;
    }
    case Json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      const bool scalars = std::all_of(j.begin(), j.end(), [](const Json& e) {
        return e.is_number() || e.is_boolean() || e.is_string();
      });
      out += "[";
      bool first = true;
      for (const Json& e : j) {
        if (!first) out += scalars ? ", " : ",";
        if (!scalars) out += first ? "\n" + pad_in : "\n" + pad_in;
        first = false;
        emit(e, shortest, depth + 1, out);
      }
      if (!scalars) out += "\n" + pad;
      out += "]";
      return;
    }
    case Json::value_t::number_float:
      out += format_double(j.get<double>(), shortest);
      return;
    default:
      out += j.dump();
      return;
  }
}

inline std::string to_text(const Json& j, bool shortest) {
  std::string out;
  emit(j, shortest, 0, out);
  out += "\n";
  return out;
}

inline void expect_keys(const Json& obj, const std::string& where,
                        std::initializer_list<const char*> allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* key : allowed)
      if (it.key() == key) {
        known = true;
        break;
      }
    if (!known)
      throw ValidationError(where, "unknown field '" + it.key() + "'");
  }
}

inline const Json& require(const Json& obj, const std::string& where,
                           const char* key) {
  const auto it = obj.find(key);
  if (it == obj.end())
    throw ValidationError(where, std::string("missing field '") + key + "'");
  return *it;
}

inline double as_number(const Json& j, const std::string& where) {
  if (!j.is_number()) throw ValidationError(where, "expected a number");
  return j.get<double>();
}

inline Eigen::VectorXd as_vector(const Json& j, const std::string& where) {
  if (!j.is_array()) throw ValidationError(where, "expected an array");
  Eigen::VectorXd v(j.size());
  for (size_t i = 0; i < j.size(); ++i)
    v(static_cast<int>(i)) = as_number(j[i], where);
  return v;
}

inline Json from_vector(const Eigen::VectorXd& v) {
  Json arr = Json::array();
  for (int i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

}  // namespace jsonio

inline ModelFile parse_model(const std::string& text) {
  using jsonio::Json;
  Json root;
  try {
    root = Json::parse(text);
  } catch (const nlohmann::json::parse_error& err) {
    throw ParseError(err.what());
  }
  if (!root.is_object()) throw ValidationError("model", "expected an object");
  jsonio::expect_keys(root, "model",
                      {"schema_version", "market", "agents", "bundle",
                       "solver"});

  ModelFile model;
  const Json& version = jsonio::require(root, "model", "schema_version");
  if (!version.is_number_integer() || version.get<int>() != 1)
    throw ValidationError("schema_version", "expected 1");

  // Market section.
  const Json& market = jsonio::require(root, "model", "market");
  jsonio::expect_keys(market, "market", {"states", "probs", "assets"});
  const Json& states = jsonio::require(market, "market", "states");
  if (!states.is_array() || states.empty())
    throw ValidationError("states", "expected a nonempty array");
  std::vector<std::string> labels;
  for (const Json& s : states) {
    if (!s.is_string()) throw ValidationError("states", "expected strings");
    labels.push_back(s.get<std::string>());
  }
  const int N = static_cast<int>(labels.size());
  const Eigen::VectorXd probs =
      jsonio::as_vector(jsonio::require(market, "market", "probs"), "probs");
  if (probs.size() != N)
    throw ValidationError("probs", "length does not match states");
  for (int w = 0; w < N; ++w)
    if (!(probs(w) > 0))
      throw ValidationError("probs", "entries must be strictly positive");
  if (std::abs(probs.sum() - 1.0) > 1e-12)
    throw ValidationError("probs", "entries must sum to one");

  const Json& assets = jsonio::require(market, "market", "assets");
  if (!assets.is_array()) throw ValidationError("assets", "expected an array");
  const int d = static_cast<int>(assets.size());
  Eigen::MatrixXd increments(d, N);
  for (int j = 0; j < d; ++j) {
    const Json& asset = assets[j];
    jsonio::expect_keys(asset, "assets", {"name", "increments"});
    model.asset_names.push_back(
        jsonio::require(asset, "assets", "name").get<std::string>());
    const Eigen::VectorXd row = jsonio::as_vector(
        jsonio::require(asset, "assets", "increments"), "increments");
    if (row.size() != N)
      throw ValidationError("increments", "length does not match states");
    increments.row(j) = row;
  }
  model.market = build_market(probs, increments, labels);

  // Agents.
  const Json& agents = jsonio::require(root, "model", "agents");
  if (!agents.is_array() || agents.empty())
    throw ValidationError("agents", "expected a nonempty array");
  for (const Json& spec : agents) {
    jsonio::expect_keys(spec, "agents",
                        {"name", "kind", "gamma", "utility", "endowment",
                         "initial_wealth", "view"});
    RiskModel agent;
    agent.name = jsonio::require(spec, "agents", "name").get<std::string>();
    const std::string where = "agents[" + agent.name + "]";
    const std::string kind =
        jsonio::require(spec, where, "kind").get<std::string>();
    if (kind == "entropic") {
      agent.kind = RiskKind::Entropic;
      agent.gamma = jsonio::as_number(jsonio::require(spec, where, "gamma"),
                                      where + ".gamma");
      if (spec.contains("utility"))
        throw ValidationError(where, "entropic agents take 'gamma' only");
    } else if (kind == "utility_based") {
      agent.kind = RiskKind::UtilityBased;
      if (spec.contains("gamma"))
        throw ValidationError(where,
                              "utility_based agents use 'utility', not "
                              "'gamma'");
      const Json& utility = jsonio::require(spec, where, "utility");
      jsonio::expect_keys(utility, where + ".utility",
                          {"family", "gamma", "exponent", "lower_bound"});
      const std::string family =
          jsonio::require(utility, where, "family").get<std::string>();
      if (family == "exponential") {
        agent.utility.family = UtilityFamily::Exponential;
        agent.utility.gamma = jsonio::as_number(
            jsonio::require(utility, where, "gamma"), where + ".gamma");
      } else if (family == "power") {
        agent.utility.family = UtilityFamily::Power;
        agent.utility.exponent = jsonio::as_number(
            jsonio::require(utility, where, "exponent"), where + ".exponent");
        agent.utility.lower_bound =
            utility.contains("lower_bound")
                ? jsonio::as_number(utility["lower_bound"],
                                    where + ".lower_bound")
                : 0.0;
      } else {
        throw ValidationError(where, "unknown utility family '" + family +
                                         "'");
      }
    } else {
      throw ValidationError(where, "unknown kind '" + kind + "'");
    }
    if (spec.contains("endowment"))
      agent.endowment = jsonio::as_vector(spec["endowment"], where +
                                                                 ".endowment");
    if (spec.contains("initial_wealth"))
      agent.initial_wealth =
          jsonio::as_number(spec["initial_wealth"], where + ".initial_wealth");
    const Json& view = jsonio::require(spec, where, "view");
    if (!view.is_array()) throw ValidationError("view", "expected an array");
    for (const Json& idx : view) {
      if (!idx.is_number_integer())
        throw ValidationError("view", "expected integer asset indices");
      agent.view.asset_indices.push_back(idx.get<int>());
    }
    try {
      validate_model(agent, model.market);
    } catch (const ValidationError& err) {
      throw ValidationError(err.field() == "view" ? "view" : where,
                            err.what());
    }
    model.agents.push_back(std::move(agent));
  }
  const MarketView joint = union_view(model.agents);
  if (joint.size() != model.market.num_assets())
    throw ValidationError(
        "view", "every asset must be accessible to at least one agent");

  // Bundle.
  const Json& bundle = jsonio::require(root, "model", "bundle");
  if (!bundle.is_array() || bundle.empty())
    throw ValidationError("bundle", "expected a nonempty array");
  model.bundle.payoffs.resize(bundle.size(), N);
  for (size_t k = 0; k < bundle.size(); ++k) {
    const Json& claim = bundle[k];
    jsonio::expect_keys(claim, "bundle", {"name", "payoff"});
    model.claim_names.push_back(
        jsonio::require(claim, "bundle", "name").get<std::string>());
    const Eigen::VectorXd payoff = jsonio::as_vector(
        jsonio::require(claim, "bundle", "payoff"), "payoff");
    if (payoff.size() != N)
      throw ValidationError("payoff", "length does not match states");
    if (!payoff.allFinite())
      throw ValidationError("payoff", "entries must be finite");
    model.bundle.payoffs.row(static_cast<int>(k)) = payoff;
  }

  // Solver configuration.
  if (root.contains("solver")) {
    const Json& solver = root["solver"];
    jsonio::expect_keys(solver, "solver",
                        {"tolerances", "max_iterations", "divergence_bound"});
    if (solver.contains("tolerances")) {
      const Json& tol = solver["tolerances"];
      jsonio::expect_keys(tol, "solver.tolerances",
                          {"inner_gradient", "outer_gradient", "foc",
                           "clearing"});
      if (tol.contains("inner_gradient"))
        model.solver.inner_gradient_tol =
            jsonio::as_number(tol["inner_gradient"], "inner_gradient");
      if (tol.contains("outer_gradient"))
        model.solver.outer_gradient_tol =
            jsonio::as_number(tol["outer_gradient"], "outer_gradient");
      if (tol.contains("foc"))
        model.solver.foc_tol = jsonio::as_number(tol["foc"], "foc");
      if (tol.contains("clearing"))
        model.solver.clearing_tol =
            jsonio::as_number(tol["clearing"], "clearing");
    }
    if (solver.contains("max_iterations")) {
      if (!solver["max_iterations"].is_number_integer())
        throw ValidationError("max_iterations", "expected an integer");
      model.solver.max_iterations = solver["max_iterations"].get<int>();
    }
    if (solver.contains("divergence_bound"))
      model.solver.divergence_bound =
          jsonio::as_number(solver["divergence_bound"], "divergence_bound");
  }

  // Non-redundancy is a warning at load time; demand sweeps on a single
  // agent stay meaningful even when the joint assumption fails.
  const NonRedundancyReport redundancy = check_non_redundancy(
      model.market, model.bundle.payoffs, MartingalePolytope{joint});
  if (!redundancy.non_redundant)
    model.warnings.push_back(
        "bundle is redundant over the joint polytope; equilibrium solves "
        "will be refused");
  return model;
}

inline ModelFile load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_model(buffer.str());
}

inline std::string save_model(const ModelFile& model) {
  using jsonio::Json;
  Json root;
  root["schema_version"] = model.schema_version;
  Json market;
  market["states"] = model.market.state_labels;
  market["probs"] = jsonio::from_vector(model.market.probs);
  Json assets = Json::array();
  for (int j = 0; j < model.market.num_assets(); ++j) {
    Json asset;
    asset["name"] = j < static_cast<int>(model.asset_names.size())
                        ? model.asset_names[j]
                        : "A" + std::to_string(j + 1);
    asset["increments"] =
        jsonio::from_vector(model.market.increments.row(j));
    assets.push_back(asset);
  }
  market["assets"] = assets;
  root["market"] = market;

  Json agents = Json::array();
  for (const RiskModel& agent : model.agents) {
    Json spec;
    spec["name"] = agent.name;
    if (agent.kind == RiskKind::Entropic) {
      spec["kind"] = "entropic";
      spec["gamma"] = agent.gamma;
    } else {
      spec["kind"] = "utility_based";
      Json utility;
      if (agent.utility.family == UtilityFamily::Exponential) {
        utility["family"] = "exponential";
        utility["gamma"] = agent.utility.gamma;
      } else {
        utility["family"] = "power";
        utility["exponent"] = agent.utility.exponent;
        utility["lower_bound"] = agent.utility.lower_bound;
      }
      spec["utility"] = utility;
    }
    spec["endowment"] = jsonio::from_vector(
        agent.endowment.size() ? agent.endowment
                               : Eigen::VectorXd::Zero(model.market.num_states()));
    spec["initial_wealth"] = agent.initial_wealth;
    spec["view"] = agent.view.asset_indices;
    agents.push_back(spec);
  }
  root["agents"] = agents;

  Json bundle = Json::array();
  for (int k = 0; k < model.bundle.count(); ++k) {
    Json claim;
    claim["name"] = k < static_cast<int>(model.claim_names.size())
                        ? model.claim_names[k]
                        : "B" + std::to_string(k + 1);
    claim["payoff"] = jsonio::from_vector(model.bundle.payoffs.row(k));
    bundle.push_back(claim);
  }
  root["bundle"] = bundle;

  Json tolerances;
  tolerances["inner_gradient"] = model.solver.inner_gradient_tol;
  tolerances["outer_gradient"] = model.solver.outer_gradient_tol;
  tolerances["foc"] = model.solver.foc_tol;
  tolerances["clearing"] = model.solver.clearing_tol;
  Json solver;
  solver["tolerances"] = tolerances;
  solver["max_iterations"] = model.solver.max_iterations;
  solver["divergence_bound"] = model.solver.divergence_bound;
  root["solver"] = solver;

  return jsonio::to_text(root, /*shortest=*/true);
}

}  // namespace pepa
