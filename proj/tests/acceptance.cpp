// Acceptance suite: runs the full desk-scale benchmark with the default
// specification and reports one pass/fail line per criterion. Exit status 0
// only when every criterion passes.

#include <cstdio>
#include <cstdlib>
#include <filesystem>

#include "hemo/bench/bench.hpp"

int main(int argc, char** argv) {
  hemo::bench::BenchSpec spec;
  std::filesystem::path out = "acceptance_out";
  if (argc > 1) out = argv[1];
  if (const char* root = std::getenv("HEMO_OUT_ROOT")) {
    if (argc <= 1) out = std::filesystem::path(root) / "acceptance";
  }

  std::printf("acceptance: running the desk-scale benchmark into %s\n",
              out.string().c_str());
  std::printf("acceptance: %d in-silico records, %d pairs, %d subjects x %d "
              "segments, %zu runs\n",
              spec.insilico_n, spec.paired_n, spec.eval_subjects,
              spec.eval_segments, spec.run_seeds.size());
  std::fflush(stdout);

  const auto result = hemo::bench::run_bench(spec, out);

  std::printf("\nacceptance summary:\n");
  int passed = 0;
  for (const auto& c : result.criteria) {
    std::printf("  [%s] %2d %s\n", !c.ran ? "SKIP" : (c.pass ? "PASS" : "FAIL"),
                c.id, c.name.c_str());
    if (c.ran && c.pass) ++passed;
  }
  std::printf("%d/%zu criteria passed\n", passed, result.criteria.size());
  return result.all_pass ? 0 : 1;
}
