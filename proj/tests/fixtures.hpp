#pragma once

// Shared fixtures for the test suites. Names follow the model files under
// models/: fix_a .. fix_u build the same scenarios programmatically.

#include <Eigen/Dense>
#include <vector>

#include "pepa/equilibrium.hpp"
#include "pepa/market.hpp"
#include "pepa/risk.hpp"

namespace fixtures {

struct Scenario {
  pepa::FiniteMarket market;
  std::vector<pepa::RiskModel> agents;
  pepa::Bundle bundle;
};

// Two uniform states, no traded assets, one entropic agent. The capital
// requirement has the closed form (1/gamma) log E[exp(-gamma B)].
inline Scenario fix_a() {
  Scenario s;
  Eigen::VectorXd probs(2);
  probs << 0.5, 0.5;
  s.market = pepa::build_market(probs, Eigen::MatrixXd(0, 2));
  pepa::RiskModel agent;
  agent.name = "solo";
  agent.kind = pepa::RiskKind::Entropic;
  agent.gamma = 1.0;
  s.agents = {agent};
  s.bundle.payoffs.resize(1, 2);
  s.bundle.payoffs << 1, -1;
  return s;
}

// Four uniform states, one asset with increments (1,1,-1,-1), two entropic
// agents with full views and no endowments, digital bundle (1,0,1,0).
// Both optimizer measures at zero equal the reference measure, so the
// equilibrium is p = 1/2 with zero trade.
inline Scenario fix_b() {
  Scenario s;
  Eigen::VectorXd probs = Eigen::VectorXd::Constant(4, 0.25);
  Eigen::MatrixXd inc(1, 4);
  inc << 1, 1, -1, -1;
  s.market = pepa::build_market(probs, inc);
  pepa::RiskModel a1;
  a1.name = "a1";
  a1.gamma = 1.0;
  a1.view.asset_indices = {1};
  pepa::RiskModel a2 = a1;
  a2.name = "a2";
  a2.gamma = 2.0;
  s.agents = {a1, a2};
  s.bundle.payoffs.resize(1, 4);
  s.bundle.payoffs << 1, 0, 1, 0;
  return s;
}

// fix_b with agent 2 endowed with (0,1,0,1), anticorrelated with the
// bundle claim. Closed form by symmetry of the exponential tilts:
//   agent 1 marginal price sigma(-a),  agent 2 marginal price sigma(2+2a)
// at agent-1 holding a, so the equilibrium is a = -2/3 and
// p = 1/(1+exp(-2/3)): agent 2 buys two thirds of a unit from agent 1.
inline Scenario fix_c() {
  Scenario s = fix_b();
  Eigen::VectorXd endowment(4);
  endowment << 0, 1, 0, 1;
  s.agents[1].endowment = endowment;
  return s;
}

inline double fix_c_price() { return 1.0 / (1.0 + std::exp(-2.0 / 3.0)); }
inline double fix_c_agent1_holding() { return -2.0 / 3.0; }

// fix_c agents trading a two-claim bundle; exercises n = 2 demand paths.
inline Scenario fix_d() {
  Scenario s = fix_c();
  s.bundle.payoffs.resize(2, 4);
  s.bundle.payoffs << 1, 0, 1, 0,
                      0, 1, 1, 0;
  return s;
}

// Six non-uniform states, one asset, a power-utility agent next to an
// entropic one.
inline Scenario fix_p() {
  Scenario s;
  Eigen::VectorXd probs(6);
  probs << 0.1, 0.15, 0.2, 0.25, 0.2, 0.1;
  Eigen::MatrixXd inc(1, 6);
  inc << 2, 1, 0.5, -0.5, -1, -2;
  s.market = pepa::build_market(probs, inc);

  pepa::RiskModel power;
  power.name = "power";
  power.kind = pepa::RiskKind::UtilityBased;
  power.utility.family = pepa::UtilityFamily::Power;
  power.utility.exponent = 0.5;
  power.utility.lower_bound = 0.0;
  power.initial_wealth = 2.0;
  power.endowment.resize(6);
  power.endowment << 0.3, 0.1, 0.0, -0.2, 0.1, 0.4;
  power.view.asset_indices = {1};

  pepa::RiskModel entropic;
  entropic.name = "entropic";
  entropic.kind = pepa::RiskKind::Entropic;
  entropic.gamma = 1.5;
  entropic.view.asset_indices = {1};

  s.agents = {power, entropic};
  s.bundle.payoffs.resize(1, 6);
  s.bundle.payoffs << 1, 0.5, 0, -0.2, 0.3, -1;
  return s;
}

// fix_b market with a utility-based exponential agent; the induced
// acceptance set is identical to the entropic agent with the same gamma
// and endowment, giving an independent route through the bisection path.
inline Scenario fix_u() {
  Scenario s;
  s.market = fix_b().market;
  pepa::RiskModel agent;
  agent.name = "exp-utility";
  agent.kind = pepa::RiskKind::UtilityBased;
  agent.utility.family = pepa::UtilityFamily::Exponential;
  agent.utility.gamma = 1.5;
  agent.endowment.resize(4);
  agent.endowment << 0.2, -0.1, 0.4, 0.0;
  agent.view.asset_indices = {1};
  s.agents = {agent};
  s.bundle.payoffs.resize(1, 4);
  s.bundle.payoffs << 1, 0, 1, 0;
  return s;
}

// Entropic twin of fix_u's agent.
inline pepa::RiskModel fix_u_entropic_twin() {
  pepa::RiskModel twin;
  twin.name = "entropic-twin";
  twin.kind = pepa::RiskKind::Entropic;
  twin.gamma = 1.5;
  twin.endowment.resize(4);
  twin.endowment << 0.2, -0.1, 0.4, 0.0;
  twin.view.asset_indices = {1};
  return twin;
}

inline Eigen::VectorXd random_claim(std::mt19937_64& rng, int states,
                                    double scale = 1.0) {
  std::uniform_real_distribution<double> unif(-scale, scale);
  Eigen::VectorXd claim(states);
  for (int w = 0; w < states; ++w) claim(w) = unif(rng);
  return claim;
}

}  // namespace fixtures
