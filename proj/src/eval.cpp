#include "hemo/eval/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include "hemo/core/rng.hpp"
#include "hemo/sigproc/sigproc.hpp"

namespace hemo::eval {

using nlohmann::json;

std::vector<double> average_ranks(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = avg;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> spearman(const std::vector<double>& a,
                               const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("spearman: length mismatch");
  }
  if (a.size() < 3) throw std::invalid_argument("spearman: need >= 3 points");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) {
      throw std::invalid_argument("spearman: non-finite value");
    }
  }
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0) return std::nullopt;  // constant series
  return sab / std::sqrt(saa * sbb);
}

std::optional<double> per_subject_trend_score(const std::vector<double>& pred,
                                              const std::vector<double>& truth,
                                              int window) {
  if (pred.size() != truth.size()) {
    throw std::invalid_argument("trend score: length mismatch");
  }
  if (pred.size() < 3) return std::nullopt;
  return spearman(sigproc::ema_smooth(pred, window),
                  sigproc::ema_smooth(truth, window));
}

double per_subject_mae(const std::vector<double>& pred,
                       const std::vector<double>& truth) {
  if (pred.size() != truth.size()) {
    throw std::invalid_argument("mae: length mismatch");
  }
  if (pred.empty()) throw std::invalid_argument("mae: empty series");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - truth[i]);
  return s / static_cast<double>(pred.size());
}

std::vector<KfoldSplit> subjectwise_kfold(const std::vector<std::string>& subject_ids,
                                          int folds, std::uint64_t seed) {
  const int n = static_cast<int>(subject_ids.size());
  if (folds < 2) throw std::invalid_argument("kfold: folds must be >= 2");
  if (n < folds) throw std::invalid_argument("kfold: more folds than subjects");
  {
    std::set<std::string> uniq(subject_ids.begin(), subject_ids.end());
    if (static_cast<int>(uniq.size()) != n) {
      throw std::invalid_argument("kfold: duplicate subject ids");
    }
  }
  std::vector<std::string> order = subject_ids;
  Rng rng(derive_seed(seed, "kfold"));
  rng.shuffle(order);

  // Test sets partition the shuffled subjects as evenly as possible.
  std::vector<std::vector<std::string>> tests(static_cast<std::size_t>(folds));
  {
    int pos = 0;
    const int base = n / folds;
    const int rem = n % folds;
    for (int f = 0; f < folds; ++f) {
      const int cnt = base + (f < rem ? 1 : 0);
      for (int i = 0; i < cnt; ++i) {
        tests[static_cast<std::size_t>(f)].push_back(order[static_cast<std::size_t>(pos++)]);
      }
    }
  }

  // One sixth of all subjects (at least one, leaving at least one for
  // training) validates; the remainder trains.
  std::vector<KfoldSplit> out;
  for (int f = 0; f < folds; ++f) {
    KfoldSplit split;
    split.test = tests[static_cast<std::size_t>(f)];
    std::vector<std::string> rest;
    for (const auto& s : order) {
      if (std::find(split.test.begin(), split.test.end(), s) == split.test.end()) {
        rest.push_back(s);
      }
    }
    int n_val = static_cast<int>(std::lround(n / 6.0));
    n_val = std::max(1, std::min(n_val, static_cast<int>(rest.size()) - 1));
    split.val.assign(rest.begin(), rest.begin() + n_val);
    split.train.assign(rest.begin() + n_val, rest.end());
    out.push_back(std::move(split));
  }
  return out;
}

double quantile(std::vector<double> v, double p) {
  if (v.empty()) throw std::invalid_argument("quantile of empty set");
  std::sort(v.begin(), v.end());
  const double idx = p * (static_cast<double>(v.size()) - 1.0);
  const std::size_t lo = static_cast<std::size_t>(std::floor(idx));
  const std::size_t hi = static_cast<std::size_t>(std::ceil(idx));
  const double w = idx - static_cast<double>(lo);
  return (1.0 - w) * v[lo] + w * v[hi];
}

double median(std::vector<double> v) { return quantile(std::move(v), 0.5); }

namespace {

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / (static_cast<double>(v.size()) - 1.0));
}

std::string fmt(std::optional<double> v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", *v);
  return buf;
}

}  // namespace

EvalReport aggregate_report(const std::vector<ScoreRow>& rows,
                            const std::filesystem::path& out_dir,
                            const json& metadata) {
  if (rows.empty()) throw std::invalid_argument("aggregate_report: no results");
  EvalReport rep;
  rep.rows = rows;
  rep.metadata = metadata.is_null() ? json::object() : metadata;

  // Group rows by (method, param).
  std::map<std::pair<std::string, std::string>,
           std::map<std::uint64_t, std::vector<const ScoreRow*>>>
      groups;
  for (const auto& r : rows) {
    groups[{r.method, r.param}][r.run_seed].push_back(&r);
  }

  // Subject-set consistency warning across methods, per parameter.
  {
    std::map<std::string, std::map<std::string, std::set<std::string>>> subj;
    for (const auto& r : rows) subj[r.param][r.method].insert(r.subject);
    for (const auto& [param, methods] : subj) {
      const auto& first = methods.begin()->second;
      for (const auto& [method, s] : methods) {
        if (s != first) {
          rep.warnings.push_back("inconsistent subject sets for param " + param +
                                 " (method " + method + ")");
        }
      }
    }
  }

  for (const auto& [key, runs] : groups) {
    MethodParamAggregate agg;
    agg.method = key.first;
    agg.param = key.second;
    std::vector<double> medians, means, maes;
    std::set<std::string> subjects;
    for (const auto& [run_seed, prs] : runs) {
      std::vector<double> rhos, m;
      for (const ScoreRow* r : prs) {
        subjects.insert(r->subject);
        if (r->rho) {
          rhos.push_back(*r->rho);
        } else {
          ++agg.n_missing;
        }
        if (r->mae) m.push_back(*r->mae);
      }
      if (!rhos.empty()) {
        medians.push_back(median(rhos));
        means.push_back(mean_of(rhos));
      }
      if (!m.empty()) maes.push_back(mean_of(m));
    }
    agg.n_runs = static_cast<int>(runs.size());
    agg.n_subjects = static_cast<int>(subjects.size());
    if (!medians.empty()) {
      agg.median_rho_mean = mean_of(medians);
      agg.median_rho_std = sample_std(medians);
      agg.mean_rho_mean = mean_of(means);
      agg.mean_rho_std = sample_std(means);
    }
    if (!maes.empty()) {
      agg.mean_mae_mean = mean_of(maes);
      agg.mean_mae_std = sample_std(maes);
    }
    rep.aggregates.push_back(agg);

    // Box statistics over per-subject rho averaged across runs.
    std::map<std::string, std::vector<double>> per_subject;
    for (const auto& [run_seed, prs] : runs) {
      for (const ScoreRow* r : prs) {
        if (r->rho) per_subject[r->subject].push_back(*r->rho);
      }
    }
    std::vector<double> vals;
    for (const auto& [s, v] : per_subject) vals.push_back(mean_of(v));
    if (vals.size() >= 2) {
      BoxStats box;
      box.method = key.first;
      box.param = key.second;
      box.q1 = quantile(vals, 0.25);
      box.median = quantile(vals, 0.5);
      box.q3 = quantile(vals, 0.75);
      const double iqr = box.q3 - box.q1;
      const double lo_fence = box.q1 - 1.5 * iqr;
      const double hi_fence = box.q3 + 1.5 * iqr;
      box.whisker_lo = box.q3;
      box.whisker_hi = box.q1;
      box.n_outliers = 0;
      double wlo = std::numeric_limits<double>::infinity();
      double whi = -std::numeric_limits<double>::infinity();
      for (double v : vals) {
        if (v < lo_fence || v > hi_fence) {
          ++box.n_outliers;
        } else {
          wlo = std::min(wlo, v);
          whi = std::max(whi, v);
        }
      }
      box.whisker_lo = wlo;
      box.whisker_hi = whi;
      rep.boxes.push_back(box);
    }
  }

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    {
      std::ofstream f(out_dir / "per_subject.csv");
      f << "method,param,subject,run_seed,rho,mae\n";
      for (const auto& r : rep.rows) {
        f << r.method << ',' << r.param << ',' << r.subject << ',' << r.run_seed
          << ',' << fmt(r.rho) << ',' << fmt(r.mae) << '\n';
      }
    }
    {
      std::ofstream f(out_dir / "aggregate.csv");
      f << "method,param,median_rho_mean,median_rho_std,mean_rho_mean,"
           "mean_rho_std,mean_mae_mean,mean_mae_std,n_subjects,n_runs,n_missing\n";
      for (const auto& a : rep.aggregates) {
        f << a.method << ',' << a.param << ',' << fmt(a.median_rho_mean) << ','
          << fmt(a.median_rho_std) << ',' << fmt(a.mean_rho_mean) << ','
          << fmt(a.mean_rho_std) << ',' << fmt(a.mean_mae_mean) << ','
          << fmt(a.mean_mae_std) << ',' << a.n_subjects << ',' << a.n_runs << ','
          << a.n_missing << '\n';
      }
    }
    {
      std::ofstream f(out_dir / "boxstats.csv");
      f << "method,param,q1,median,q3,whisker_lo,whisker_hi,n_outliers\n";
      for (const auto& b : rep.boxes) {
        f << b.method << ',' << b.param << ',' << fmt(b.q1) << ',' << fmt(b.median)
          << ',' << fmt(b.q3) << ',' << fmt(b.whisker_lo) << ','
          << fmt(b.whisker_hi) << ',' << b.n_outliers << '\n';
      }
    }
    {
      json meta = rep.metadata;
      meta["warnings"] = rep.warnings;
      meta["n_rows"] = rep.rows.size();
      std::ofstream f(out_dir / "metadata.json");
      f << meta.dump(2) << "\n";
    }
  }
  return rep;
}

}  // namespace hemo::eval
