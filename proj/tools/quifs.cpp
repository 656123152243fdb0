#include "quifs/quifs.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitCertification = 2;
constexpr int kExitInfeasible = 3;

quifs::Vector parsePoint(const std::string& text, int dim) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    size_t used = 0;
    double x = 0.0;
    try {
      x = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw quifs::InputError("bad coordinate '" + item + "' in " + text);
    v.push_back(x);
  }
  if (static_cast<int>(v.size()) != dim) {
    throw quifs::InputError("expected " + std::to_string(dim) + " coordinates, got " + std::to_string(v.size()));
  }
  return Eigen::Map<quifs::Vector>(v.data(), dim);
}

quifs::DisturbanceMode parseMode(const std::string& s) {
  if (s == "zero") return quifs::DisturbanceMode::Zero;
  if (s == "vertices") return quifs::DisturbanceMode::Vertices;
  if (s == "uniform") return quifs::DisturbanceMode::Uniform;
  throw quifs::InputError("disturbance must be zero, vertices or uniform");
}

void warnOnHashMismatch(const quifs::ExplicitPolicy& pol, const quifs::ProblemConfig& cfg) {
  if (pol.configHash != cfg.hash) {
    std::cerr << "warning: table was built from config " << quifs::hexHash(pol.configHash) << ", given config is "
              << quifs::hexHash(cfg.hash) << "\n";
  }
}

template <class F>
void withOutput(const std::string& path, F&& write) {
  if (path.empty() || path == "-") {
    write(std::cout);
    return;
  }
  std::ofstream out(path);
  if (!out) throw quifs::InputError("cannot write " + path);
  write(out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"quifs: explicit MPC policies by quasi-interpolation"};
  app.require_subcommand(1);

  std::string configPath, tablePath, outPath, logPath, at, x0Text, disturbance = "zero";
  int threads = 0, steps = 200, gridDiv = 3, offsetDiv = 7;
  long long maxPoints = 0;
  std::uint64_t seed = 1;

  auto* synth = app.add_subcommand("synth", "synthesize a policy table from a config");
  synth->add_option("config", configPath, "problem config (JSON)")->required()->check(CLI::ExistingFile);
  synth->add_option("-o,--output", tablePath, "policy table to write")->required();
  synth->add_option("--log", logPath, "JSON-lines synthesis log");
  synth->add_option("--threads", threads, "sampling threads (overrides the config)");

  auto* eval = app.add_subcommand("eval", "evaluate a policy table at a state");
  eval->add_option("table", tablePath)->required()->check(CLI::ExistingFile);
  eval->add_option("--at", at, "comma-separated state")->required();

  auto* certifyCmd = app.add_subcommand("certify", "check the uniform error bound on an off-lattice grid");
  certifyCmd->add_option("table", tablePath)->required()->check(CLI::ExistingFile);
  certifyCmd->add_option("--config", configPath, "config the table was built from")->required()->check(CLI::ExistingFile);
  certifyCmd->add_option("--grid-div", gridDiv, "validation spacing h / grid-div");
  certifyCmd->add_option("--offset-div", offsetDiv, "grid offset h / offset-div");
  certifyCmd->add_option("--max-points", maxPoints, "deterministic subsample size (0 = all)");
  certifyCmd->add_option("--seed", seed, "subsample seed");

  auto* info = app.add_subcommand("info", "print the table header as JSON");
  info->add_option("table", tablePath)->required()->check(CLI::ExistingFile);

  auto* simulate = app.add_subcommand("simulate", "closed-loop run with the explicit policy");
  simulate->add_option("table", tablePath)->required()->check(CLI::ExistingFile);
  simulate->add_option("--config", configPath)->required()->check(CLI::ExistingFile);
  simulate->add_option("--x0", x0Text, "initial state")->required();
  simulate->add_option("--steps", steps);
  simulate->add_option("--seed", seed);
  simulate->add_option("--disturbance", disturbance, "zero | vertices | uniform");
  simulate->add_option("-o,--output", outPath, "trajectory CSV");

  auto* compare = app.add_subcommand("compare", "twin runs: explicit policy vs online receding horizon");
  compare->add_option("table", tablePath)->required()->check(CLI::ExistingFile);
  compare->add_option("--config", configPath)->required()->check(CLI::ExistingFile);
  compare->add_option("--x0", x0Text, "initial state")->required();
  compare->add_option("--steps", steps);
  compare->add_option("--seed", seed);
  compare->add_option("--disturbance", disturbance, "zero | vertices | uniform");
  compare->add_option("-o,--output", outPath, "comparison CSV");

  auto* exportCmd = app.add_subcommand("export", "write the lattice values as CSV");
  exportCmd->add_option("table", tablePath)->required()->check(CLI::ExistingFile);
  exportCmd->add_option("-o,--output", outPath, "CSV path (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      quifs::ProblemConfig cfg = quifs::loadConfig(configPath);
      if (threads > 0) cfg.synth.oracle.threads = threads;
      quifs::SynthesisLog log;
      int code = kExitOk;
      try {
        const quifs::ExplicitPolicy pol = quifs::synthesize(cfg.problem, cfg.epsilon, cfg.kernel, cfg.synth, &log);
        quifs::saveTable(pol, tablePath);
        std::cout << quifs::policyInfoJson(pol).dump(2) << "\n";
      } catch (const quifs::BudgetInfeasibleError& e) {
        std::cerr << "infeasible synthesis: " << e.what() << "\n";
        log.add("error", {}, e.what());
        code = kExitInfeasible;
      } catch (const quifs::SynthesisError& e) {
        std::cerr << "infeasible synthesis: " << e.what() << "\n";
        log.add("error", {}, e.what());
        code = kExitInfeasible;
      }
      if (!logPath.empty()) withOutput(logPath, [&](std::ostream& os) { quifs::writeLogJsonl(log, os); });
      return code;
    }

    const quifs::ExplicitPolicy pol = quifs::loadTable(tablePath);

    if (eval->parsed()) {
      const quifs::Vector x = parsePoint(at, pol.dim());
      const auto u = quifs::evaluatePolicy(pol, x);
      quifs::Json j{{"inDomain", u.has_value()}};
      if (u) j["u"] = std::vector<double>(u->data(), u->data() + u->size());
      std::cout << j.dump() << "\n";
      return kExitOk;
    }
    if (info->parsed()) {
      std::cout << quifs::policyInfoJson(pol).dump(2) << "\n";
      return kExitOk;
    }
    if (exportCmd->parsed()) {
      withOutput(outPath, [&](std::ostream& os) { quifs::writeTableCsv(pol, os); });
      return kExitOk;
    }

    const quifs::ProblemConfig cfg = quifs::loadConfig(configPath);
    warnOnHashMismatch(pol, cfg);
    quifs::MpcProblem problem = cfg.problem;
    problem.epsilon = pol.budget.epsilon;

    if (certifyCmd->parsed()) {
      quifs::MpcOracle oracle(problem, cfg.synth.oracle);
      quifs::CertifyOptions co;
      co.gridDiv = gridDiv;
      co.offsetDiv = offsetDiv;
      co.maxPoints = maxPoints;
      co.seed = seed;
      const quifs::CertificationReport rep = quifs::certify(pol, quifs::oracleTruth(oracle), co);
      std::cout << quifs::certificationJson(rep).dump(2) << "\n";
      return rep.passed() ? kExitOk : kExitCertification;
    }

    const quifs::Vector x0 = parsePoint(x0Text, pol.dim());
    const quifs::DisturbanceSpec spec{parseMode(disturbance), seed};
    if (simulate->parsed()) {
      const quifs::Trajectory tr = quifs::simulateClosedLoop(problem, pol, x0, steps, spec);
      if (!outPath.empty()) withOutput(outPath, [&](std::ostream& os) { quifs::writeTrajectoryCsv(tr, os); });
      quifs::StabilityReport rep;
      rep.recursivelyFeasible = !tr.outOfDomain;
      rep.constraintViolations = tr.constraintViolations;
      rep.terminalNeighborhoodRadius = quifs::tailRadius(tr);
      rep.steps = tr.steps();
      quifs::Json j = quifs::stabilityJson(rep);
      j["outOfDomainStep"] = tr.outOfDomainStep;
      std::cout << j.dump(2) << "\n";
      return kExitOk;
    }
    if (compare->parsed()) {
      const quifs::RhcComparison cmp = quifs::compareWithOnlineRhc(problem, pol, x0, steps, spec, cfg.synth.oracle);
      if (!outPath.empty()) withOutput(outPath, [&](std::ostream& os) { quifs::writeCompareCsv(cmp, os); });
      std::cout << quifs::stabilityJson(cmp.report).dump(2) << "\n";
      return kExitOk;
    }
  } catch (const quifs::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitOk;
}
