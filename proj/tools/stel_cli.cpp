// Command-line front end: single runs, batch suites, and the crossing-edge
// search benchmark. All output is reproducible from the seed.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "stel/engine.hpp"
#include "stel/experiment.hpp"
#include "stel/oracle.hpp"

namespace {

struct GraphSpec {
  stel::GraphKind kind = stel::GraphKind::path;
  int n = 4;
  double p = 0.5;
};

GraphSpec parse_graph_flag(const std::string& s) {
  GraphSpec g;
  std::stringstream ss(s);
  std::string kind, n, p;
  std::getline(ss, kind, ':');
  std::getline(ss, n, ':');
  std::getline(ss, p, ':');
  auto k = stel::parse_graph_kind(kind);
  if (!k) throw CLI::ValidationError("--graph", "unknown kind: " + kind);
  g.kind = *k;
  if (!n.empty()) g.n = std::stoi(n);
  if (!p.empty()) g.p = std::stod(p);
  return g;
}

std::pair<stel::Adversary, int> parse_adversary_flag(const std::string& s) {
  std::stringstream ss(s);
  std::string name, preset;
  std::getline(ss, name, ':');
  std::getline(ss, preset, ':');
  auto a = stel::parse_adversary(name);
  if (!a) throw CLI::ValidationError("--adversary", "unknown strategy: " + name);
  return {*a, preset.empty() ? 0 : std::stoi(preset)};
}

std::pair<std::uint64_t, std::uint64_t> parse_seed_range(const std::string& s) {
  const auto dots = s.find("..");
  if (dots == std::string::npos) {
    const std::uint64_t v = std::stoull(s);
    return {v, v};
  }
  return {std::stoull(s.substr(0, dots)), std::stoull(s.substr(dots + 2))};
}

void print_report(const stel::RunResult& r, bool quiet) {
  const stel::RunSummary s = stel::summarize(r);
  std::cout << stel::csv_header() << '\n' << stel::to_csv(s) << '\n';
  if (quiet) return;
  for (const auto& v : r.report.verdicts)
    std::cout << (v.pass ? "  pass " : "  FAIL ") << v.name
              << (v.pass ? "" : " @" + std::to_string(v.first_violation) + " " + v.detail)
              << '\n';
  for (const auto& v : r.snapshot_violations)
    std::cout << "  FAIL snapshot:" << v.check << " @" << v.round << " " << v.detail << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"self-stabilizing leader election / spanning tree simulator"};
  app.require_subcommand(1);

  std::string graph_flag = "path:4";
  std::string adversary_flag = "clean";
  std::string seeds_flag = "1";
  std::string config_path, out_dir;
  std::int64_t max_rounds = -1, cadence = 0;
  bool quiet = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--graph", graph_flag, "KIND:N[:P] (path cycle star complete gnp random_tree)");
    cmd->add_option("--adversary", adversary_flag, "clean | random | hostile[:K]");
    cmd->add_option("--seeds", seeds_flag, "single seed or A..B");
    cmd->add_option("--max-rounds", max_rounds, "round cap (default: derived)");
    cmd->add_option("--oracle-cadence", cadence, "snapshot check interval (0: by size)");
    cmd->add_option("--out", out_dir, "output directory for CSV");
    cmd->add_flag("--quiet", quiet, "summary lines only");
  };

  auto* run_cmd = app.add_subcommand("run", "single run with full verdict report");
  add_common(run_cmd);

  auto* suite_cmd = app.add_subcommand("suite", "batch over a seed range, CSV output");
  add_common(suite_cmd);
  suite_cmd->add_option("--config", config_path, "key=value config file (overrides flags)");

  auto* bench_cmd = app.add_subcommand("bench", "crossing-edge search success rates");
  int bench_trials = 1000;
  int bench_tree = 0;
  add_common(bench_cmd);
  bench_cmd->add_option("--trials", bench_trials, "phases per fixture");
  bench_cmd->add_option("--tree-size", bench_tree, "nodes in the fixture tree (0: half)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) {
      const GraphSpec g = parse_graph_flag(graph_flag);
      const auto [adv, preset] = parse_adversary_flag(adversary_flag);
      const auto [lo, hi] = parse_seed_range(seeds_flag);
      for (std::uint64_t seed = lo; seed <= hi; ++seed) {
        stel::RunConfig cfg;
        cfg.kind = g.kind;
        cfg.n_phys = g.n;
        cfg.p = g.p;
        cfg.seed = seed;
        cfg.adversary = adv;
        cfg.hostile_preset = preset;
        cfg.max_rounds = max_rounds;
        print_report(stel::run_checked(cfg, cadence), quiet);
      }
      return 0;
    }
    if (suite_cmd->parsed()) {
      stel::SuiteCell cell;
      if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw std::runtime_error("cannot open " + config_path);
        cell = stel::parse_cell(in);
      } else {
        const GraphSpec g = parse_graph_flag(graph_flag);
        const auto [adv, preset] = parse_adversary_flag(adversary_flag);
        const auto [lo, hi] = parse_seed_range(seeds_flag);
        cell.kind = g.kind;
        cell.n_phys = g.n;
        cell.p = g.p;
        cell.adversary = adv;
        cell.hostile_preset = preset;
        cell.seed_lo = lo;
        cell.seed_hi = hi;
        cell.max_rounds = max_rounds;
        cell.cadence = cadence;
      }
      std::ofstream csv;
      std::ostream* csv_out = nullptr;
      if (!out_dir.empty()) {
        csv.open(out_dir + "/suite.csv");
        csv << stel::csv_header() << '\n';
        csv_out = &csv;
      }
      const stel::SuiteOutcome out = stel::run_suite_cell(cell, csv_out);
      if (!quiet) {
        if (!out_dir.empty()) std::cout << "wrote " << out_dir << "/suite.csv\n";
        std::cout << "runs=" << out.rows.size() << " stabilized=" << out.stabilized
                  << " hard_failures=" << out.hard_failures
                  << " median_stab=" << out.stab_quantile(0.5)
                  << " p95_stab=" << out.stab_quantile(0.95) << '\n';
      }
      return out.hard_failures == 0 ? 0 : 1;
    }
    if (bench_cmd->parsed()) {
      const GraphSpec g = parse_graph_flag(graph_flag);
      const auto [lo, hi] = parse_seed_range(seeds_flag);
      stel::Topology phys = stel::generate(g.kind, g.n, lo, g.p);
      const int k = bench_tree > 0 ? bench_tree : std::max(1, g.n / 2);
      std::set<stel::NodeId> tree;
      // lowest-id connected cluster of size k
      std::vector<stel::NodeId> frontier{0};
      while (!frontier.empty() && static_cast<int>(tree.size()) < k) {
        stel::NodeId v = frontier.front();
        frontier.erase(frontier.begin());
        if (!tree.insert(v).second) continue;
        for (const auto& he : phys.adj[v]) frontier.push_back(he.peer);
      }
      const auto truth = stel::brute_force_crossing_edges(phys, tree);
      const stel::FindAnyStats st = stel::findany_bench(phys, tree, bench_trials, hi);
      std::cout << "tree_size=" << tree.size() << " crossing_edges=" << truth.size()
                << " trials=" << st.trials << " reported=" << st.reported
                << " genuine=" << st.genuine << " op2_ok=" << st.op2_ok << '\n';
      const bool sound = st.genuine == st.reported && st.op2_ok == st.reported;
      const bool live = truth.empty() ? st.reported == 0
                                      : st.reported * 5 >= st.trials * 2;  // >= 0.4
      return sound && live ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
