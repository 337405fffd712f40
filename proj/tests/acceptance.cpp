// Runs every acceptance criterion from configs/acceptance.json and prints one
// PASS/FAIL line per criterion followed by the individual checks.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "levymal/config.hpp"
#include "levymal/report.hpp"

using namespace levymal;

namespace {

struct Criterion {
  int id;
  std::string title;
  std::vector<std::string> experiments;
};

const std::vector<Criterion> criteria{
    {1, "jump-derivative exactness", {"jump_exactness"}},
    {2, "isometry suite", {"isometry"}},
    {3, "Girsanov / Cameron-Martin", {"girsanov"}},
    {4, "martingale BSDE", {"martingale_bsde"}},
    {5, "linear-driver BSDE and dt sweep", {"linear_bsde"}},
    {6, "tree-oracle equivalence", {"tree_equivalence"}},
    {7, "derivative triangle", {"derivative_triangle"}},
    {8, "chain rule", {"chain_rule"}},
    {9, "representation (tree and Monte Carlo)", {"representation_tree", "representation_mc"}},
    {10, "Picard / Gronwall monitor", {"picard_gronwall"}},
    {11, "stability ratio", {"stability"}},
    {12, "utility BSDE truncation", {"utility_bsde_tree"}},
};

}  // namespace

int main(int argc, char** argv) {
  const std::string path = argc > 1 ? argv[1] : LEVYMAL_ACCEPTANCE_CONFIG;
  const auto cfg = load_config(path);

  std::vector<std::string> lines;
  std::vector<ExperimentResult> all;
  bool ok = true;
  for (const auto& c : criteria) {
    bool pass = true;
    double secs = 0.0;
    std::string detail;
    for (const auto& spec : select_experiments(cfg, c.experiments)) {
      const auto t0 = std::chrono::steady_clock::now();
      try {
        auto res = run_experiment(spec);
        pass = pass && res.pass();
        all.push_back(std::move(res));
      } catch (const std::exception& e) {
        pass = false;
        detail += " [" + spec.name + " threw: " + e.what() + "]";
      }
      secs += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    char buf[160];
    std::snprintf(buf, sizeof buf, "criterion %2d %-40s %s  (%.1fs)", c.id, c.title.c_str(),
                  pass ? "PASS" : "FAIL", secs);
    std::cout << buf << detail << std::endl;
    lines.push_back(buf + detail);
    ok = ok && pass;
  }

  std::cout << "\n" << summary_text(all, {cfg.scheme.seed, "n/a", cfg.hash}) << "\n";
  for (const auto& l : lines) std::cout << l << "\n";
  std::cout << (ok ? "ALL CRITERIA PASS" : "SOME CRITERIA FAIL") << std::endl;
  return ok ? 0 : 1;
}
