#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <random>

#include "pepa/market.hpp"

using namespace pepa;

namespace {

FiniteMarket two_state_no_assets() {
  Eigen::VectorXd probs(2);
  probs << 0.5, 0.5;
  return build_market(probs, Eigen::MatrixXd(0, 2));
}

FiniteMarket four_state_one_asset() {
  Eigen::VectorXd probs = Eigen::VectorXd::Constant(4, 0.25);
  Eigen::MatrixXd inc(1, 4);
  inc << 1, 1, -1, -1;
  return build_market(probs, inc);
}

}  // namespace

TEST_CASE("build_market accepts asset-free markets") {
  const FiniteMarket market = two_state_no_assets();
  CHECK(market.num_assets() == 0);
  CHECK(market.martingale_certificate.minCoeff() > 0);
  CHECK(market.martingale_certificate.sum() == Catch::Approx(1.0));
}

TEST_CASE("build_market attaches a strictly positive certificate") {
  const FiniteMarket market = four_state_one_asset();
  const Eigen::VectorXd q = market.martingale_certificate;
  CHECK(q.minCoeff() > 0);
  CHECK((market.increments * q).cwiseAbs().maxCoeff() <= 1e-10);
  CHECK(q.sum() == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("build_market rejects arbitrage") {
  Eigen::VectorXd probs(2);
  probs << 0.5, 0.5;
  Eigen::MatrixXd inc(1, 2);
  inc << 1, 2;  // strictly positive gain in every state
  CHECK_THROWS_AS(build_market(probs, inc), ArbitrageDetected);

  Eigen::MatrixXd weak(1, 2);
  weak << 0, 1;  // nonnegative gain, positive somewhere
  CHECK_THROWS_AS(build_market(probs, weak), ArbitrageDetected);
}

TEST_CASE("build_market validates probabilities") {
  Eigen::VectorXd bad(2);
  bad << 0.5, 0.4;
  CHECK_THROWS_AS(build_market(bad, Eigen::MatrixXd(0, 2)),
                  InvalidProbabilities);
  Eigen::VectorXd zero(2);
  zero << 1.0, 0.0;
  CHECK_THROWS_AS(build_market(zero, Eigen::MatrixXd(0, 2)),
                  InvalidProbabilities);
}

TEST_CASE("replicable_split recovers the asset itself") {
  const FiniteMarket market = four_state_one_asset();
  const MarketView view = full_view(market);
  const Claim claim = market.increments.row(0);
  const ReplicableSplit split = replicable_split(market, view, claim);
  CHECK(split.hedge(0) == Catch::Approx(1.0).margin(1e-12));
  CHECK(split.constant == Catch::Approx(0.0).margin(1e-12));
  CHECK(split.residual.cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(split.is_replicable);
}

TEST_CASE("replicable_split of the digital claim") {
  const FiniteMarket market = four_state_one_asset();
  Claim claim(4);
  claim << 1, 0, 1, 0;
  const ReplicableSplit split =
      replicable_split(market, full_view(market), claim);
  CHECK(split.constant == Catch::Approx(0.5).margin(1e-12));
  CHECK(split.hedge(0) == Catch::Approx(0.0).margin(1e-12));
  Eigen::VectorXd expected(4);
  expected << 0.5, -0.5, 0.5, -0.5;
  CHECK((split.residual - expected).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK_FALSE(split.is_replicable);
}

TEST_CASE("constants are replicable at their own cost") {
  const FiniteMarket market = four_state_one_asset();
  const Claim claim = Eigen::VectorXd::Constant(4, 2.75);
  const ReplicableSplit split =
      replicable_split(market, full_view(market), claim);
  CHECK(split.constant == Catch::Approx(2.75).margin(1e-12));
  CHECK(split.hedge.cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(split.is_replicable);
}

TEST_CASE("split residual is orthogonal and splitting is idempotent") {
  const FiniteMarket market = four_state_one_asset();
  const MarketView view = full_view(market);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  for (int trial = 0; trial < 25; ++trial) {
    Claim claim(4);
    for (int w = 0; w < 4; ++w) claim(w) = unif(rng);
    const ReplicableSplit split = replicable_split(market, view, claim);
    // Orthogonality in the P-weighted inner product.
    const Eigen::VectorXd weighted =
        market.probs.cwiseProduct(split.residual);
    CHECK(std::abs(weighted.sum()) <= 1e-10);
    CHECK(std::abs(weighted.dot(market.increments.row(0))) <= 1e-10);
    // Idempotence.
    const ReplicableSplit again =
        replicable_split(market, view, split.residual);
    CHECK(std::abs(again.constant) <= 1e-10);
    CHECK(again.hedge.cwiseAbs().maxCoeff() <= 1e-10);
    CHECK((again.residual - split.residual).cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("support bounds of the digital claim") {
  const FiniteMarket market = four_state_one_asset();
  const MartingalePolytope polytope{full_view(market)};
  Claim claim(4);
  claim << 1, 0, 1, 0;
  const SupportBounds bounds = support_bounds(market, polytope, claim);
  CHECK(bounds.lower == Catch::Approx(0.0).margin(1e-9));
  CHECK(bounds.upper == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("support bounds of constants and replicable claims") {
  const FiniteMarket market = four_state_one_asset();
  const MartingalePolytope polytope{full_view(market)};
  const SupportBounds constant =
      support_bounds(market, polytope, Eigen::VectorXd::Constant(4, 0.3));
  CHECK(constant.lower == Catch::Approx(0.3).margin(1e-9));
  CHECK(constant.upper == Catch::Approx(0.3).margin(1e-9));

  const Claim hedge = 2.5 * market.increments.row(0);
  const SupportBounds repl = support_bounds(market, polytope, hedge);
  CHECK(repl.lower == Catch::Approx(0.0).margin(1e-9));
  CHECK(repl.upper == Catch::Approx(0.0).margin(1e-9));
}

TEST_CASE("support bounds are sub/super-additive on random claims") {
  const FiniteMarket market = four_state_one_asset();
  const MartingalePolytope polytope{full_view(market)};
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  for (int trial = 0; trial < 25; ++trial) {
    Claim x(4), y(4);
    for (int w = 0; w < 4; ++w) {
      x(w) = unif(rng);
      y(w) = unif(rng);
    }
    const SupportBounds bx = support_bounds(market, polytope, x);
    const SupportBounds by = support_bounds(market, polytope, y);
    const SupportBounds bxy = support_bounds(market, polytope, x + y);
    CHECK(bxy.upper <= bx.upper + by.upper + 1e-9);
    CHECK(bxy.lower >= bx.lower + by.lower - 1e-9);
  }
}

TEST_CASE("non-redundancy of the digital claim bundle") {
  const FiniteMarket market = four_state_one_asset();
  const MartingalePolytope polytope{full_view(market)};
  Eigen::MatrixXd bundle(1, 4);
  bundle << 1, 0, 1, 0;
  const NonRedundancyReport report =
      check_non_redundancy(market, bundle, polytope);
  CHECK(report.non_redundant);
}

TEST_CASE("replicable bundle rows are redundant") {
  const FiniteMarket market = four_state_one_asset();
  const MartingalePolytope polytope{full_view(market)};
  Eigen::MatrixXd bundle(2, 4);
  bundle.row(0) << 1, 0, 1, 0;
  bundle.row(1) = market.increments.row(0);
  const NonRedundancyReport report =
      check_non_redundancy(market, bundle, polytope);
  REQUIRE_FALSE(report.non_redundant);
  // Witness combination has flat expectation across the polytope.
  const Claim combo = bundle.transpose() * report.witness;
  const SupportBounds bounds = support_bounds(market, polytope, combo);
  CHECK(bounds.upper - bounds.lower <= 1e-9);
  // The witness loads on the replicable row.
  CHECK(std::abs(report.witness(1)) > 0.9);
}

TEST_CASE("duplicated rows are redundant") {
  const FiniteMarket market = four_state_one_asset();
  const MartingalePolytope polytope{full_view(market)};
  Eigen::MatrixXd bundle(2, 4);
  bundle.row(0) << 1, 0, 1, 0;
  bundle.row(1) << 1, 0, 1, 0;
  const NonRedundancyReport report =
      check_non_redundancy(market, bundle, polytope);
  REQUIRE_FALSE(report.non_redundant);
  CHECK(std::abs(report.witness(0) + report.witness(1)) <= 1e-9);
}

TEST_CASE("view validation") {
  const FiniteMarket market = four_state_one_asset();
  MarketView bad;
  bad.asset_indices = {2};
  CHECK_THROWS_AS(validate_view(market, bad), ValidationError);
  MarketView unsorted;
  unsorted.asset_indices = {1, 1};
  CHECK_THROWS_AS(validate_view(market, unsorted), ValidationError);
}
