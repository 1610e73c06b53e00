#pragma once

#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

#include "hemo/eval/eval.hpp"
#include "hemo/pipeline/benchmark.hpp"

namespace hemo::bench {

// Desk-scale benchmark specification: dataset sizes, training-epoch
// overrides, run seeds, and the acceptance thresholds (pinned here, not
// tunable at run time).
struct BenchSpec {
  int insilico_n = 8000;
  int paired_n = 5000;
  int paired_subjects = 100;
  int eval_subjects = 12;
  int eval_segments = 150;

  int batch_size = 256;  // all trainers; the acceptance run keeps 256
  int npe_epochs = 30;
  int cvae_epochs = 15;
  int det_epochs = 15;
  int wk_epochs = 40;
  int sup_epochs = 30;
  int folds = 3;
  int m = 10;
  int k = 20;

  std::uint64_t master_seed = 7;  // datasets and benchmark construction
  std::vector<std::uint64_t> run_seeds{101, 202, 303};

  pipeline::BenchmarkSpec benchmark;  // prior/noise/filter/transfer ranges

  nlohmann::json to_json() const;
  static BenchSpec from_json(const nlohmann::json& j);
};

// Acceptance thresholds (fixed).
struct Thresholds {
  double flow_invert = 1e-5;
  double flow_logdet = 1e-3;
  double loss_analytic = 1e-6;
  double recovery_hr = 0.9;
  double recovery_sv = 0.6;
  double sbc_ks_p = 0.01;
  double hybrid_hr = 0.8;
  double hybrid_sv = 0.4;
  double reject_enrichment = 0.8;
  double determinism_rho = 1e-3;
  double metric_exact = 1e-9;
};

struct CriterionResult {
  int id = 0;
  std::string name;
  bool ran = false;
  bool pass = false;
  std::string detail;
};

struct BenchResult {
  std::vector<CriterionResult> criteria;
  eval::EvalReport report;
  nlohmann::json summary;
  bool all_pass = false;
};

// One-sample Kolmogorov-Smirnov p-value against U(0, 1), with the Stephens
// small-sample correction.
double ks_uniform_pvalue(std::vector<double> u);

// Runs the full pipeline (simulate -> train everything -> predict all
// methods -> evaluate) for every run seed, then evaluates each acceptance
// criterion, printing one pass/fail line per criterion and writing
// datasets, checkpoints, prediction CSVs, report CSVs and the summary under
// out_dir.
BenchResult run_bench(const BenchSpec& spec, const std::filesystem::path& out_dir);

}  // namespace hemo::bench
