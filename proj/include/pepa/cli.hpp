#pragma once

#include <CLI11.hpp>

#include <Eigen/Dense>
#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "pepa/equilibrium.hpp"
#include "pepa/errors.hpp"
#include "pepa/model_io.hpp"
#include "pepa/oracle.hpp"
#include "pepa/stability.hpp"

// Command-line surface. Every subcommand prints one deterministic JSON
// record to stdout (fixed field order, 12 significant digits) and
// optionally writes a CSV table. Exit codes: 0 success, 1 I/O or schema
// errors, 2 model/assumption violations, 3 solver non-convergence.

namespace pepa {
namespace clidetail {

using jsonio::Json;

inline int log_level() {
  const char* env = std::getenv("EQUILIBRIA_LOG");
  return env ? std::atoi(env) : 0;
}

inline void log(std::ostream& err, int level, const std::string& msg) {
  if (log_level() >= level) err << "[pepa] " << msg << "\n";
}

inline std::string fmt12(double v) { return jsonio::format_double(v, false); }

inline Json vector_json(const Eigen::VectorXd& v) {
  return jsonio::from_vector(v);
}

inline Json matrix_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (int i = 0; i < m.rows(); ++i) rows.push_back(vector_json(m.row(i)));
  return rows;
}

inline void print_record(std::ostream& out, const Json& record) {
  out << jsonio::to_text(record, /*shortest=*/false);
}

inline void write_csv(const std::string& path,
                      const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows) {
  std::ofstream file(path, std::ios::binary);  // LF line endings everywhere
  if (!file) throw ParseError("cannot open '" + path + "' for writing");
  for (size_t i = 0; i < header.size(); ++i)
    file << (i ? "," : "") << header[i];
  file << "\n";
  for (const auto& row : rows) {
    for (size_t i = 0; i < row.size(); ++i) file << (i ? "," : "") << row[i];
    file << "\n";
  }
}

inline Eigen::VectorXd parse_number_list(const std::string& text,
                                         const std::string& what) {
  std::vector<double> values;
  std::string token;
  std::istringstream stream(text);
  while (std::getline(stream, token, ',')) {
    try {
      values.push_back(std::stod(token));
    } catch (const std::exception&) {
      throw ValidationError(what, "cannot parse number '" + token + "'");
    }
  }
  Eigen::VectorXd v(values.size());
  for (size_t i = 0; i < values.size(); ++i)
    v(static_cast<int>(i)) = values[i];
  return v;
}

inline Eigen::MatrixXd parse_allocation(const std::string& text, int agents,
                                        int claims) {
  std::vector<Eigen::VectorXd> rows;
  std::string row_text;
  std::istringstream stream(text);
  while (std::getline(stream, row_text, ';'))
    rows.push_back(parse_number_list(row_text, "allocation"));
  if (static_cast<int>(rows.size()) != agents)
    throw ValidationError("allocation", "expected " + std::to_string(agents) +
                                            " rows");
  Eigen::MatrixXd weights(agents, claims);
  for (int i = 0; i < agents; ++i) {
    if (rows[i].size() != claims)
      throw ValidationError("allocation", "expected " +
                                              std::to_string(claims) +
                                              " entries per row");
    weights.row(i) = rows[i];
  }
  return weights;
}

inline int agent_index(const ModelFile& model, const std::string& handle) {
  for (size_t i = 0; i < model.agents.size(); ++i)
    if (model.agents[i].name == handle) return static_cast<int>(i);
  try {
    const int idx = std::stoi(handle);
    if (idx >= 0 && idx < static_cast<int>(model.agents.size())) return idx;
  } catch (const std::exception&) {
  }
  throw ValidationError("agent", "no agent named '" + handle + "'");
}

inline int classify(const std::exception& err) {
  if (dynamic_cast<const ParseError*>(&err)) return 1;
  if (dynamic_cast<const ValidationError*>(&err)) return 1;
  if (dynamic_cast<const NonConvergence*>(&err)) return 3;
  if (dynamic_cast<const GridTooCoarse*>(&err)) return 3;
  if (dynamic_cast<const MinimumOnBoundary*>(&err)) return 3;
  if (dynamic_cast<const Error*>(&err)) return 2;  // assumption/model errors
  return 1;
}

inline const char* error_kind(int code) {
  switch (code) {
    case 2: return "assumption_violation";
    case 3: return "non_convergence";
    default: return "input_error";
  }
}

}  // namespace clidetail

inline int run_cli(std::vector<std::string> args, std::ostream& out,
                   std::ostream& err) {
  using clidetail::Json;
  CLI::App app{"Convex capital requirements, demand functions and "
               "partial-equilibrium prices on finite-state markets"};
  app.require_subcommand(1);

  std::string model_path;
  std::string out_path;
  std::string agent_handle = "0";
  std::string allocation_text;
  std::string payoff_text;
  std::string family_text = "gamma";
  std::string alt_text;
  int claim_index = 0;
  int steps = 19;
  int restarts = 0;
  int schedule_length = 20;
  double sweep_from = 0.05;
  double sweep_to = 0.95;
  bool oracle_check = false;

  CLI::App* validate = app.add_subcommand("validate", "Load and validate a model file");
  validate->add_option("model", model_path, "model file")->required();

  CLI::App* price = app.add_subcommand("price", "Solve the equilibrium price-allocation");
  price->add_option("model", model_path, "model file")->required();
  price->add_option("--out", out_path, "per-agent CSV table");
  price->add_option("--restarts", restarts, "extra solves from random starts");
  price->add_flag("--oracle", oracle_check, "cross-check against the grid search")
      ->group("");

  CLI::App* sweep = app.add_subcommand("demand-sweep", "Tabulate one agent's demand along a price segment");
  sweep->add_option("model", model_path, "model file")->required();
  sweep->add_option("--agent", agent_handle, "agent name or zero-based index");
  sweep->add_option("--claim", claim_index, "zero-based bundle claim to sweep");
  sweep->add_option("--from", sweep_from, "first price");
  sweep->add_option("--to", sweep_to, "last price");
  sweep->add_option("--steps", steps, "number of rows");
  sweep->add_option("--out", out_path, "CSV output path");

  CLI::App* pareto = app.add_subcommand("pareto-check", "Test whether the agents already share an optimizer measure");
  pareto->add_option("model", model_path, "model file")->required();

  CLI::App* agree = app.add_subcommand("agree-check", "Decide mutual agreeability of an allocation");
  agree->add_option("model", model_path, "model file")->required();
  agree->add_option("--allocation", allocation_text,
                    "rows 'a11,a12;a21,a22'; defaults to the equilibrium allocation");

  CLI::App* infconv = app.add_subcommand("infconv", "Optimal risk sharing of a claim across all agents");
  infconv->add_option("model", model_path, "model file")->required();
  infconv->add_option("--claim-index", claim_index, "zero-based bundle claim");
  infconv->add_option("--payoff", payoff_text, "explicit payoff vector 'v1,v2,...'");

  CLI::App* stability = app.add_subcommand("stability-sweep", "Re-solve the equilibrium along a perturbation schedule");
  stability->add_option("model", model_path, "model file")->required();
  stability->add_option("--family", family_text,
                        "gamma | endowment | probs | wealth");
  stability->add_option("--length", schedule_length, "schedule end index");
  stability->add_option("--alt", alt_text,
                        "mixing target probabilities for the probs family");
  stability->add_option("--out", out_path, "CSV output path");

  try {
    std::reverse(args.begin(), args.end());  // CLI11 consumes reversed args
    app.parse(args);
  } catch (const CLI::CallForHelp& help) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& parse_err) {
    err << parse_err.what() << "\n";
    return 1;
  }

  try {
    const ModelFile model = load_model(model_path);
    clidetail::log(err, 1, "loaded " + model_path);
    const int I = static_cast<int>(model.agents.size());
    const int n = model.bundle.count();

    if (app.got_subcommand(validate)) {
      Json record;
      record["command"] = "validate";
      record["model"] = model_path;
      record["valid"] = true;
      record["states"] = model.market.num_states();
      record["assets"] = model.market.num_assets();
      record["agents"] = I;
      record["claims"] = n;
      record["certificate"] =
          clidetail::vector_json(model.market.martingale_certificate);
      record["warnings"] = model.warnings;
      clidetail::print_record(out, record);
      return 0;
    }

    if (app.got_subcommand(price)) {
      const PepaOptions options = model.solver.pepa_options();
      const PepaResult result =
          solve_pepa(model.agents, model.market, model.bundle, options);
      clidetail::log(err, 1, "equilibrium solved in " +
                                 std::to_string(result.iterations) +
                                 " iterations");
      double restart_spread = 0.0;
      std::mt19937_64 rng(20240901);
      std::uniform_real_distribution<double> unif(-2.0, 2.0);
      for (int k = 0; k < restarts; ++k) {
        PepaOptions restart_options = options;
        restart_options.check_assumptions = false;
        restart_options.initial.resize(I - 1, n);
        for (int i = 0; i < I - 1; ++i)
          for (int j = 0; j < n; ++j) restart_options.initial(i, j) = unif(rng);
        const PepaResult again =
            solve_pepa(model.agents, model.market, model.bundle,
                       restart_options);
        restart_spread = std::max(
            restart_spread,
            (again.price - result.price).cwiseAbs().maxCoeff());
      }
      if (restarts > 0 && restart_spread > 1e-6)
        throw NonConvergence("restarts disagree by " +
                             std::to_string(restart_spread));

      Json record;
      record["command"] = "price";
      record["price"] = clidetail::vector_json(result.price);
      record["allocation"] = clidetail::matrix_json(result.allocation.weights);
      record["clearing_residual"] = result.clearing_residual;
      record["foc_residual"] = result.foc_residual;
      record["iterations"] = result.iterations;
      if (restarts > 0) record["restart_spread"] = restart_spread;
      Json measures = Json::array();
      for (const auto& q : result.optimizer_measures)
        measures.push_back(clidetail::vector_json(q));
      record["optimizer_measures"] = measures;
      if (oracle_check && (I - 1) * n <= 2) {
        oracle::GridSpec grid;
        grid.lower.resize((I - 1) * n);
        grid.upper.resize((I - 1) * n);
        for (int i = 0; i < I - 1; ++i)
          for (int j = 0; j < n; ++j) {
            grid.lower(i * n + j) = result.allocation.weights(i, j) - 0.5;
            grid.upper(i * n + j) = result.allocation.weights(i, j) + 0.5;
          }
        grid.step = 1e-3;
        const oracle::GridEquilibrium eq = oracle::equilibrium_grid(
            model.agents, model.market, model.bundle, grid);
        record["oracle_price"] = clidetail::vector_json(eq.price);
        record["oracle_gap"] =
            (eq.price - result.price).cwiseAbs().maxCoeff();
      }
      clidetail::print_record(out, record);

      if (!out_path.empty()) {
        std::vector<std::string> header = {"agent"};
        for (int j = 0; j < n; ++j) header.push_back("a" + std::to_string(j + 1));
        for (int j = 0; j < n; ++j) header.push_back("p" + std::to_string(j + 1));
        header.push_back("clearing_residual");
        header.push_back("foc_residual");
        std::vector<std::vector<std::string>> rows;
        for (int i = 0; i < I; ++i) {
          std::vector<std::string> row = {model.agents[i].name};
          for (int j = 0; j < n; ++j)
            row.push_back(clidetail::fmt12(result.allocation.weights(i, j)));
          for (int j = 0; j < n; ++j)
            row.push_back(clidetail::fmt12(result.price(j)));
          row.push_back(clidetail::fmt12(result.clearing_residual));
          row.push_back(clidetail::fmt12(result.foc_residual));
          rows.push_back(row);
        }
        clidetail::write_csv(out_path, header, rows);
      }
      return 0;
    }

    if (app.got_subcommand(sweep)) {
      const int agent = clidetail::agent_index(model, agent_handle);
      if (claim_index < 0 || claim_index >= n)
        throw ValidationError("claim", "index out of range");
      if (steps < 2) throw ValidationError("steps", "need at least two rows");
      const RiskModel& who = model.agents[agent];
      DemandOptions options;
      options.risk = model.solver.risk_options();
      options.divergence_bound = model.solver.divergence_bound;
      // Off-swept components sit at the agent's marginal price at zero.
      const RiskEvaluation at_zero = capital_requirement(
          who, model.market, Eigen::VectorXd::Zero(model.market.num_states()),
          options.risk);
      const Eigen::VectorXd marginal =
          model.bundle.payoffs * at_zero.optimizer_measure;

      std::vector<std::vector<std::string>> rows;
      bool monotone = true;
      double previous = 0.0;
      for (int s = 0; s < steps; ++s) {
        Eigen::VectorXd p = marginal;
        p(claim_index) =
            sweep_from + (sweep_to - sweep_from) * s / (steps - 1);
        const DemandResult z = demand(who, model.market, model.bundle, p,
                                      options);
        if (s > 0 && z.holdings(claim_index) >= previous) monotone = false;
        previous = z.holdings(claim_index);
        std::vector<std::string> row;
        for (int j = 0; j < n; ++j) row.push_back(clidetail::fmt12(p(j)));
        for (int j = 0; j < n; ++j)
          row.push_back(clidetail::fmt12(z.holdings(j)));
        row.push_back(clidetail::fmt12(z.foc_residual));
        rows.push_back(row);
      }
      std::vector<std::string> header;
      for (int j = 0; j < n; ++j) header.push_back("p" + std::to_string(j + 1));
      for (int j = 0; j < n; ++j) header.push_back("z" + std::to_string(j + 1));
      header.push_back("residual");

      Json record;
      record["command"] = "demand-sweep";
      record["agent"] = who.name;
      record["claim"] = claim_index;
      record["rows"] = steps;
      record["monotone_decreasing"] = monotone;
      if (out_path.empty()) {
        Json table = Json::array();
        for (const auto& row : rows) {
          Json r = Json::array();
          for (const auto& cell : row) r.push_back(std::stod(cell));
          table.push_back(r);
        }
        record["table"] = table;
      } else {
        clidetail::write_csv(out_path, header, rows);
        record["csv"] = out_path;
      }
      clidetail::print_record(out, record);
      return 0;
    }

    if (app.got_subcommand(pareto)) {
      const ParetoCheck check =
          pareto_check(model.agents, model.market, model.solver.risk_options());
      Json record;
      record["command"] = "pareto-check";
      record["pareto"] = check.pareto;
      record["max_gap"] = check.max_gap;
      if (check.pareto)
        record["common_measure"] = clidetail::vector_json(check.common_measure);
      Json measures = Json::array();
      for (const auto& q : check.measures)
        measures.push_back(clidetail::vector_json(q));
      record["optimizer_measures"] = measures;
      clidetail::print_record(out, record);
      return 0;
    }

    if (app.got_subcommand(agree)) {
      Allocation allocation;
      Json record;
      record["command"] = "agree-check";
      if (allocation_text.empty()) {
        const PepaResult result = solve_pepa(
            model.agents, model.market, model.bundle,
            model.solver.pepa_options());
        allocation = result.allocation;
        record["allocation_source"] = "equilibrium";
        record["price"] = clidetail::vector_json(result.price);
      } else {
        allocation.weights =
            clidetail::parse_allocation(allocation_text, I, n);
        record["allocation_source"] = "explicit";
      }
      const AgreeabilityResult result =
          check_agreeability(model.agents, model.market, model.bundle,
                             allocation, model.solver.risk_options());
      record["allocation"] = clidetail::matrix_json(allocation.weights);
      record["agreeable"] = result.agreeable;
      record["optimum"] = result.optimum;
      record["risk_values"] = clidetail::vector_json(result.risk_values);
      if (result.agreeable)
        record["price_witness"] = clidetail::vector_json(result.price);
      else
        record["farkas_weights"] =
            clidetail::vector_json(result.farkas_weights);
      clidetail::print_record(out, record);
      return 0;
    }

    if (app.got_subcommand(infconv)) {
      Claim claim;
      if (!payoff_text.empty()) {
        claim = clidetail::parse_number_list(payoff_text, "payoff");
        if (claim.size() != model.market.num_states())
          throw ValidationError("payoff", "length does not match states");
      } else {
        if (claim_index < 0 || claim_index >= n)
          throw ValidationError("claim-index", "index out of range");
        claim = model.bundle.payoffs.row(claim_index);
      }
      const InfConvolution result = inf_convolution(
          model.agents, model.market, claim, model.solver.risk_options());
      Json record;
      record["command"] = "infconv";
      record["value"] = result.value;
      record["first_order_residual"] = result.first_order_residual;
      record["iterations"] = result.iterations;
      Json split = Json::array();
      for (const auto& part : result.split)
        split.push_back(clidetail::vector_json(part));
      record["split"] = split;
      clidetail::print_record(out, record);
      return 0;
    }

    if (app.got_subcommand(stability)) {
      PerturbationFamily family;
      family.base_models = model.agents;
      family.base_market = model.market;
      family.schedule_length = schedule_length;
      if (family_text == "gamma")
        family.kind = PerturbationKind::Gamma;
      else if (family_text == "endowment")
        family.kind = PerturbationKind::Endowment;
      else if (family_text == "probs")
        family.kind = PerturbationKind::Probs;
      else if (family_text == "wealth")
        family.kind = PerturbationKind::Wealth;
      else
        throw ValidationError("family", "unknown family '" + family_text + "'");
      if (!alt_text.empty())
        family.probs_alt = clidetail::parse_number_list(alt_text, "alt");

      const SweepReport report = run_stability_sweep(
          family, model.bundle, model.solver.pepa_options());

      std::vector<std::string> header = {"m"};
      for (int j = 0; j < n; ++j) header.push_back("p" + std::to_string(j + 1));
      for (int i = 0; i < I; ++i)
        for (int j = 0; j < n; ++j)
          header.push_back("a" + std::to_string(i + 1) + "_" +
                           std::to_string(j + 1));
      header.push_back("price_gap");
      header.push_back("allocation_gap");
      header.push_back("r_grid_gap");
      std::vector<std::vector<std::string>> rows;
      for (const SweepRow& row : report.rows) {
        std::vector<std::string> cells = {std::to_string(row.m)};
        for (int j = 0; j < n; ++j)
          cells.push_back(clidetail::fmt12(row.price(j)));
        for (int i = 0; i < I; ++i)
          for (int j = 0; j < n; ++j)
            cells.push_back(clidetail::fmt12(row.allocation(i, j)));
        cells.push_back(clidetail::fmt12(row.price_gap));
        cells.push_back(clidetail::fmt12(row.allocation_gap));
        cells.push_back(clidetail::fmt12(row.r_grid_gap));
        rows.push_back(cells);
      }

      Json record;
      record["command"] = "stability-sweep";
      record["family"] = family_text;
      record["length"] = schedule_length;
      record["limit_price"] = clidetail::vector_json(report.limit.price);
      record["final_price_gap"] = report.rows.back().price_gap;
      record["final_allocation_gap"] = report.rows.back().allocation_gap;
      record["final_r_grid_gap"] = report.rows.back().r_grid_gap;
      record["min_convexity_margin"] = report.min_convexity_margin;
      if (!out_path.empty()) {
        clidetail::write_csv(out_path, header, rows);
        record["csv"] = out_path;
      }
      clidetail::print_record(out, record);
      return 0;
    }

    err << "no subcommand executed\n";
    return 1;
  } catch (const std::exception& failure) {
    const int code = clidetail::classify(failure);
    Json record;
    record["error"] = Json::object();
    record["error"]["kind"] = clidetail::error_kind(code);
    record["error"]["message"] = failure.what();
    clidetail::print_record(out, record);
    err << failure.what() << "\n";
    return code;
  }
}

}  // namespace pepa
