#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

namespace hemo::eval {

// Ranks with ties receiving the average rank (1-based).
std::vector<double> average_ranks(const std::vector<double>& x);

// Spearman rank correlation: Pearson correlation of rank-transformed
// series. A constant series has no defined rank correlation and yields
// nullopt (reported as missing, never coerced to 0).
std::optional<double> spearman(const std::vector<double>& a,
                               const std::vector<double>& b);

// EMA-smooth both series (window segments), then Spearman. Fewer than 3
// points -> missing.
std::optional<double> per_subject_trend_score(const std::vector<double>& pred,
                                              const std::vector<double>& truth,
                                              int window = 16);

double per_subject_mae(const std::vector<double>& pred,
                       const std::vector<double>& truth);

struct KfoldSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

// Subject-wise K-fold: test sets partition the subjects; within each fold
// roughly one sixth of all subjects goes to validation and the rest to
// training. Deterministic per seed.
std::vector<KfoldSplit> subjectwise_kfold(const std::vector<std::string>& subject_ids,
                                          int folds, std::uint64_t seed);

double median(std::vector<double> v);
double quantile(std::vector<double> v, double p);  // linear interpolation

struct ScoreRow {
  std::string method;
  std::string param;
  std::string subject;
  std::uint64_t run_seed = 0;
  std::optional<double> rho;
  std::optional<double> mae;
};

struct MethodParamAggregate {
  std::string method;
  std::string param;
  double median_rho_mean = 0.0;  // median over subjects, mean across runs
  double median_rho_std = 0.0;
  double mean_rho_mean = 0.0;
  double mean_rho_std = 0.0;
  double mean_mae_mean = 0.0;
  double mean_mae_std = 0.0;
  int n_subjects = 0;
  int n_runs = 0;
  int n_missing = 0;
};

struct BoxStats {
  std::string method;
  std::string param;
  double q1 = 0.0, median = 0.0, q3 = 0.0;
  double whisker_lo = 0.0, whisker_hi = 0.0;
  int n_outliers = 0;
};

struct EvalReport {
  std::vector<ScoreRow> rows;
  std::vector<MethodParamAggregate> aggregates;
  std::vector<BoxStats> boxes;  // per-subject rho averaged across runs
  std::vector<std::string> warnings;
  nlohmann::json metadata;
};

// Builds the aggregate tables and, when out_dir is nonempty, writes
// per_subject.csv, aggregate.csv, boxstats.csv and metadata.json.
EvalReport aggregate_report(const std::vector<ScoreRow>& rows,
                            const std::filesystem::path& out_dir = {},
                            const nlohmann::json& metadata = {});

}  // namespace hemo::eval
