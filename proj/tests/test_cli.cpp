#include <catch2/catch_amalgamated.hpp>

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "pepa/cli.hpp"

using namespace pepa;
using Json = nlohmann::ordered_json;

namespace {
const std::string kModels = PEPA_MODELS_DIR;
const std::string kData = std::string(PEPA_MODELS_DIR) + "/../tests/data";

struct CliRun {
  int exit_code = 0;
  std::string out;
  std::string err;
  Json record;
};

CliRun run(std::vector<std::string> args) {
  std::ostringstream out, err;
  CliRun result;
  result.exit_code = run_cli(std::move(args), out, err);
  result.out = out.str();
  result.err = err.str();
  if (!result.out.empty() && result.out.front() == '{')
    result.record = Json::parse(result.out);
  return result;
}

std::string temp_csv(const std::string& tag) {
  return std::string("/tmp/pepa_test_") + tag + ".csv";
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  REQUIRE(file.good());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(file, line)) lines.push_back(line);
  return lines;
}
}  // namespace

TEST_CASE("validate reports the model shape") {
  const CliRun r = run({"validate", kModels + "/fix-b.json"});
  REQUIRE(r.exit_code == 0);
  CHECK(r.record["valid"] == true);
  CHECK(r.record["states"] == 4);
  CHECK(r.record["assets"] == 1);
  CHECK(r.record["agents"] == 2);
}

TEST_CASE("validate rejects arbitrage with exit code 2") {
  const CliRun r = run({"validate", kData + "/arbitrage.json"});
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("no equivalent martingale measure") != std::string::npos);
  CHECK(r.record["error"]["kind"] == "assumption_violation");
}

TEST_CASE("parse problems exit with code 1") {
  CHECK(run({"validate", kData + "/bad-probs.json"}).exit_code == 1);
  CHECK(run({"validate", kData + "/no-such-file.json"}).exit_code == 1);
  CHECK(run({"unknown-subcommand"}).exit_code == 1);
}

TEST_CASE("price solves the symmetric fixture") {
  const CliRun r = run({"price", kModels + "/fix-b.json", "--restarts", "3"});
  REQUIRE(r.exit_code == 0);
  CHECK(r.record["price"][0].get<double>() == Catch::Approx(0.5).margin(1e-6));
  CHECK(std::abs(r.record["allocation"][0][0].get<double>()) <= 1e-6);
  CHECK(r.record["clearing_residual"].get<double>() <= 1e-6);
  CHECK(r.record["foc_residual"].get<double>() <= 1e-6);
}

TEST_CASE("price output is byte-deterministic") {
  const CliRun first = run({"price", kModels + "/fix-c.json"});
  const CliRun second = run({"price", kModels + "/fix-c.json"});
  REQUIRE(first.exit_code == 0);
  CHECK(first.out == second.out);
  CHECK(first.record["price"][0].get<double>() ==
        Catch::Approx(fixtures::fix_c_price()).margin(1e-6));
}

TEST_CASE("price writes a per-agent CSV") {
  const std::string csv = temp_csv("price");
  const CliRun r = run({"price", kModels + "/fix-c.json", "--out", csv});
  REQUIRE(r.exit_code == 0);
  const auto lines = read_lines(csv);
  REQUIRE(lines.size() == 3);  // header + two agents
  CHECK(lines[0] == "agent,a1,p1,clearing_residual,foc_residual");
  std::remove(csv.c_str());
}

TEST_CASE("demand sweep produces a strictly decreasing table") {
  const std::string csv = temp_csv("sweep");
  const CliRun r = run({"demand-sweep", kModels + "/fix-b.json", "--agent",
                        "a1", "--claim", "0", "--from", "0.05", "--to", "0.95",
                        "--steps", "90", "--out", csv});
  REQUIRE(r.exit_code == 0);
  CHECK(r.record["rows"] == 90);
  CHECK(r.record["monotone_decreasing"] == true);
  const auto lines = read_lines(csv);
  REQUIRE(lines.size() == 91);
  CHECK(lines[0] == "p1,z1,residual");
  double previous = 1e300;
  for (size_t i = 1; i < lines.size(); ++i) {
    std::istringstream row(lines[i]);
    std::string p, z;
    std::getline(row, p, ',');
    std::getline(row, z, ',');
    const double demand_value = std::stod(z);
    CHECK(demand_value < previous);
    previous = demand_value;
  }
  std::remove(csv.c_str());
}

TEST_CASE("pareto-check distinguishes the fixtures") {
  const CliRun symmetric = run({"pareto-check", kModels + "/fix-b.json"});
  REQUIRE(symmetric.exit_code == 0);
  CHECK(symmetric.record["pareto"] == true);
  CHECK(symmetric.record["common_measure"][0].get<double>() ==
        Catch::Approx(0.25).margin(1e-7));

  const CliRun tilted = run({"pareto-check", kModels + "/fix-c.json"});
  REQUIRE(tilted.exit_code == 0);
  CHECK(tilted.record["pareto"] == false);
  CHECK(tilted.record["max_gap"].get<double>() > 0.1);
}

TEST_CASE("agree-check accepts the equilibrium allocation") {
  const CliRun r = run({"agree-check", kModels + "/fix-c.json"});
  REQUIRE(r.exit_code == 0);
  CHECK(r.record["agreeable"] == true);
  CHECK(r.record["allocation_source"] == "equilibrium");
}

TEST_CASE("agree-check refuses an unbalanced explicit allocation") {
  const CliRun r = run({"agree-check", kModels + "/fix-c.json",
                        "--allocation", "2.5;-2.5"});
  REQUIRE(r.exit_code == 0);
  CHECK(r.record["allocation_source"] == "explicit");
  if (r.record["agreeable"] == false) {
    CHECK(r.record.contains("farkas_weights"));
  }
}

TEST_CASE("infconv reports value and split") {
  const CliRun r = run({"infconv", kModels + "/fix-b.json", "--claim-index",
                        "0"});
  REQUIRE(r.exit_code == 0);
  CHECK(r.record["first_order_residual"].get<double>() <= 1e-8);
  CHECK(r.record["split"].size() == 2);
}

TEST_CASE("stability sweep emits the report table") {
  const std::string csv = temp_csv("stability");
  const CliRun r = run({"stability-sweep", kModels + "/fix-c.json",
                        "--family", "endowment", "--length", "8", "--out",
                        csv});
  REQUIRE(r.exit_code == 0);
  CHECK(r.record["family"] == "endowment");
  CHECK(r.record["min_convexity_margin"].get<double>() > 0);
  const auto lines = read_lines(csv);
  REQUIRE(lines.size() == 10);  // header + m = 0..8
  CHECK(lines[0] == "m,p1,a1_1,a2_1,price_gap,allocation_gap,r_grid_gap");
  std::remove(csv.c_str());
}

TEST_CASE("redundant bundles fail price with exit code 2") {
  const std::string text = R"({
    "schema_version": 1,
    "market": {
      "states": ["a", "b", "c", "d"],
      "probs": [0.25, 0.25, 0.25, 0.25],
      "assets": [{"name": "S1", "increments": [1.0, 1.0, -1.0, -1.0]}]
    },
    "agents": [
      {"name": "a1", "kind": "entropic", "gamma": 1.0, "view": [1]},
      {"name": "a2", "kind": "entropic", "gamma": 2.0, "view": [1]}
    ],
    "bundle": [{"name": "hedge", "payoff": [1.0, 1.0, -1.0, -1.0]}]
  })";
  const std::string path = "/tmp/pepa_test_redundant.json";
  {
    std::ofstream file(path);
    file << text;
  }
  const CliRun r = run({"price", path});
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("non-redundancy") != std::string::npos);
  std::remove(path.c_str());
}

TEST_CASE("help is printed on request") {
  const CliRun r = run({"--help"});
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("demand-sweep") != std::string::npos);
}
