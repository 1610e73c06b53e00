#include "hemo/bench/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <chrono>
#include <memory>
#include <numbers>

#include "hemo/core/io.hpp"
#include "hemo/cvae/cvae.hpp"
#include "hemo/insilico/insilico.hpp"
#include "hemo/npe/npe.hpp"
#include "hemo/pipeline/pipeline.hpp"

namespace hemo::bench {

namespace fs = std::filesystem;
using nlohmann::json;

json BenchSpec::to_json() const {
  return json{{"insilico_n", insilico_n},
              {"batch_size", batch_size},
              {"paired_n", paired_n},
              {"paired_subjects", paired_subjects},
              {"eval_subjects", eval_subjects},
              {"eval_segments", eval_segments},
              {"npe_epochs", npe_epochs},
              {"cvae_epochs", cvae_epochs},
              {"det_epochs", det_epochs},
              {"wk_epochs", wk_epochs},
              {"sup_epochs", sup_epochs},
              {"folds", folds},
              {"m", m},
              {"k", k},
              {"master_seed", master_seed},
              {"run_seeds", run_seeds}};
}

BenchSpec BenchSpec::from_json(const json& j) {
  BenchSpec s;
  s.insilico_n = j.value("insilico_n", s.insilico_n);
  s.batch_size = j.value("batch_size", s.batch_size);
  s.paired_n = j.value("paired_n", s.paired_n);
  s.paired_subjects = j.value("paired_subjects", s.paired_subjects);
  s.eval_subjects = j.value("eval_subjects", s.eval_subjects);
  s.eval_segments = j.value("eval_segments", s.eval_segments);
  s.npe_epochs = j.value("npe_epochs", s.npe_epochs);
  s.cvae_epochs = j.value("cvae_epochs", s.cvae_epochs);
  s.det_epochs = j.value("det_epochs", s.det_epochs);
  s.wk_epochs = j.value("wk_epochs", s.wk_epochs);
  s.sup_epochs = j.value("sup_epochs", s.sup_epochs);
  s.folds = j.value("folds", s.folds);
  s.m = j.value("m", s.m);
  s.k = j.value("k", s.k);
  s.master_seed = j.value("master_seed", s.master_seed);
  s.run_seeds = j.value("run_seeds", s.run_seeds);
  return s;
}

double ks_uniform_pvalue(std::vector<double> u) {
  if (u.empty()) return 0.0;
  std::sort(u.begin(), u.end());
  const double n = static_cast<double>(u.size());
  double d = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double hi = (static_cast<double>(i) + 1.0) / n - u[i];
    const double lo = u[i] - static_cast<double>(i) / n;
    d = std::max({d, hi, lo});
  }
  const double lambda = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d;
  double p = 0.0;
  for (int j = 1; j <= 100; ++j) {
    const double term = 2.0 * std::pow(-1.0, j - 1) * std::exp(-2.0 * j * j * lambda * lambda);
    p += term;
  }
  return std::clamp(p, 0.0, 1.0);
}

namespace {

std::uint64_t hash_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot hash " + p.string());
  std::uint64_t h = 0xCBF29CE484222325ULL;
  char buf[65536];
  while (f.read(buf, sizeof(buf)) || f.gcount() > 0) {
    for (std::streamsize i = 0; i < f.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001B3ULL;
    }
    if (!f) break;
  }
  return h;
}

std::map<std::string, std::uint64_t> hash_dataset_dir(const fs::path& dir) {
  std::map<std::string, std::uint64_t> hashes;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file()) {
      hashes[e.path().filename().string()] = hash_file(e.path());
    }
  }
  return hashes;
}

char fmt_buf[512];

template <class... Args>
std::string strf(const char* f, Args... args) {
  std::snprintf(fmt_buf, sizeof(fmt_buf), f, args...);
  return fmt_buf;
}

// ---- fast structural criteria ----

CriterionResult criterion_flow_correctness(const Thresholds& thr) {
  CriterionResult c{1, "flow correctness (invertibility + log-det)", true, true, ""};
  double worst_inv = 0.0, worst_ld = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(derive_seed(4242, "accept.flow", static_cast<std::uint64_t>(trial)));
    npe::CondFlow flow(kNumParams, 140, 3, 128, rng.next_u64());
    npe::DMat theta(kNumParams, 1), emb(140, 1);
    for (int i = 0; i < kNumParams; ++i) theta(i, 0) = rng.normal();
    for (int i = 0; i < 140; ++i) emb(i, 0) = rng.normal();

    auto f = flow.forward(theta, emb, false);
    const double inv_err =
        (flow.inverse(f.z, emb) - theta).cwiseAbs().maxCoeff();
    worst_inv = std::max(worst_inv, inv_err);

    const double h = 1e-4;
    Eigen::Matrix4d jac;
    for (int j = 0; j < kNumParams; ++j) {
      npe::DMat tp = theta, tm = theta;
      tp(j, 0) += h;
      tm(j, 0) -= h;
      jac.col(j) = (flow.forward(tp, emb, false).z.col(0) -
                    flow.forward(tm, emb, false).z.col(0)) /
                   (2.0 * h);
    }
    const double ld_err =
        std::abs(std::log(std::abs(jac.determinant())) - f.log_det[0]);
    worst_ld = std::max(worst_ld, ld_err);
  }
  c.pass = worst_inv < thr.flow_invert && worst_ld < thr.flow_logdet;
  c.detail = strf("max inverse err %.2e (< %.0e), max log-det err %.2e (< %.0e)",
                  worst_inv, thr.flow_invert, worst_ld, thr.flow_logdet);
  return c;
}

CriterionResult criterion_loss_analytic(const Thresholds& thr) {
  CriterionResult c{2, "NPE loss analytic check", true, true, ""};
  npe::NpeConfig cfg;
  npe::NpeModel model(cfg, 5);
  model.flow.zero_params();
  model.std_mean = Eigen::Vector4d::Constant(1.0);
  model.std_scale = Eigen::Vector4d::Ones();
  std::vector<LabeledSimRecord> batch(2);
  Eigen::VectorXd ramp(kSegmentSamples);
  for (int i = 0; i < kSegmentSamples; ++i) {
    ramp[i] = 0.5 + 0.4 * std::sin(2.0 * std::numbers::pi * i / 125.0);
  }
  for (auto& r : batch) {
    r.theta = ParamVector{1.0, 1.0, 1.0, 1.0};
    r.apw = WaveformSegment::from_double(ramp, WaveKind::Apw);
  }
  const double loss = npe::npe_loss(model, batch);
  const double expect = 2.0 * std::log(2.0 * std::numbers::pi);
  c.pass = std::abs(loss - expect) < thr.loss_analytic;
  c.detail = strf("loss %.10f vs (d/2)log(2pi) = %.10f, |diff| %.2e (< %.0e)",
                  loss, expect, std::abs(loss - expect), thr.loss_analytic);
  return c;
}

CriterionResult criterion_metric_fidelity(const Thresholds& thr) {
  CriterionResult c{8, "metric fidelity (spearman, EMA, MAE, k-fold)", true, true, ""};
  bool ok = true;
  std::string why;

  const auto rho = eval::spearman({1, 2, 3, 4}, {1, 3, 2, 4});
  if (!rho || std::abs(*rho - 0.8) > thr.metric_exact) {
    ok = false;
    why += "spearman ";
  }
  const auto perfect = eval::spearman({1, 2, 3}, {10, 20, 30});
  const auto anti = eval::spearman({1, 2, 3}, {3, 2, 1});
  if (!perfect || std::abs(*perfect - 1.0) > thr.metric_exact || !anti ||
      std::abs(*anti + 1.0) > thr.metric_exact) {
    ok = false;
    why += "spearman-ends ";
  }

  const auto ema = sigproc::ema_smooth({0.0, 1.0}, 16);
  if (std::abs(ema[0]) > thr.metric_exact ||
      std::abs(ema[1] - 2.0 / 17.0) > thr.metric_exact) {
    ok = false;
    why += "ema ";
  }

  if (std::abs(eval::per_subject_mae({1, 2, 3}, {2, 2, 5}) - 1.0) >
      thr.metric_exact) {
    ok = false;
    why += "mae ";
  }

  std::vector<std::string> ids;
  for (int i = 0; i < 6; ++i) ids.push_back("S" + std::to_string(i));
  const auto folds = eval::subjectwise_kfold(ids, 3, 17);
  std::map<std::string, int> test_count;
  for (const auto& f : folds) {
    if (f.test.size() != 2) ok = false;
    for (const auto& s : f.test) ++test_count[s];
  }
  for (const auto& id : ids) {
    if (test_count[id] != 1) {
      ok = false;
      why += "kfold ";
      break;
    }
  }

  c.pass = ok;
  c.detail = ok ? "spearman 0.8 exact, EMA 2/17 exact, MAE exact, k-fold partition exact"
              : ("failed: " + why);
  return c;
}

CriterionResult criterion_aggregation(const BenchSpec& spec) {
  CriterionResult c{10, "prediction aggregation equals enumeration oracle", true,
                    true, ""};
  pipeline::HybridModel h;
  h.translator = std::make_shared<cvae::CvaeModel>(cvae::CvaeConfig{}, 404);
  auto post = std::make_shared<npe::NpeModel>(npe::NpeConfig{}, 405);
  post->std_mean = Eigen::Vector4d(100.0, 85.0, 0.14, 1450.0);
  post->std_scale = Eigen::Vector4d(30.0, 25.0, 0.03, 400.0);
  h.posterior = post;
  h.m = spec.m;
  h.k = spec.k;

  pipeline::BenchmarkSpec bs = spec.benchmark;
  bs.n_subjects = 1;
  bs.segments_per_subject = 1;
  const auto subj = pipeline::make_eval_subjects(bs, 11);
  const auto& ppg = subj[0].records[0].ppg;

  const auto samples = pipeline::predict_samples(ppg, h, 99);
  const auto out = pipeline::predict(ppg, h, 99);
  double max_err = 0.0;
  for (int p = 0; p < kNumReports; ++p) {
    double mean = 0.0;
    for (const auto& s : samples) mean += (p == 4) ? s.co() : s.to_vector()[p];
    mean /= static_cast<double>(samples.size());
    double var = 0.0;
    for (const auto& s : samples) {
      const double v = (p == 4) ? s.co() : s.to_vector()[p];
      var += (v - mean) * (v - mean);
    }
    var /= static_cast<double>(samples.size());
    max_err = std::max(max_err, std::abs(out.result.mean[p] - mean) /
                                    std::max(1.0, std::abs(mean)));
    max_err = std::max(max_err, std::abs(out.result.stddev[p] - std::sqrt(var)) /
                                    std::max(1.0, std::sqrt(var)));
  }
  bool co_ok = true;
  for (const auto& s : samples) {
    if (std::abs(s.co() - s.hr * s.sv / 1000.0) > 1e-12) co_ok = false;
  }
  c.pass = max_err < 1e-9 && co_ok &&
           static_cast<int>(samples.size()) == spec.m * spec.k;
  c.detail = strf("m*k = %zu samples, max aggregate err %.2e, per-sample CO identity %s",
                  samples.size(), max_err, co_ok ? "holds" : "violated");
  return c;
}

// ---- heavy pipeline ----

struct Datasets {
  std::vector<LabeledSimRecord> insilico;
  std::vector<PairedSegment> paired;
  std::vector<SubjectSeries> evalset;
};

Datasets generate_datasets(const BenchSpec& spec) {
  Datasets d;
  insilico::BuildOptions opts;
  opts.n = spec.insilico_n;
  opts.prior = spec.benchmark.prior;
  opts.noise = spec.benchmark.apw_noise;
  opts.filter = spec.benchmark.filter;
  opts.seed = derive_seed(spec.master_seed, "bench.sim");
  opts.with_windkessel_ppg = true;
  d.insilico = insilico::build_insilico_dataset(opts);

  pipeline::BenchmarkSpec bs = spec.benchmark;
  bs.n_subjects = spec.eval_subjects;
  bs.segments_per_subject = spec.eval_segments;
  d.paired = pipeline::make_paired_dataset(spec.paired_n, spec.paired_subjects, bs,
                                           derive_seed(spec.master_seed, "bench.paired"));
  d.evalset = pipeline::make_eval_subjects(bs, derive_seed(spec.master_seed, "bench.eval"));
  return d;
}

struct RunArtifacts {
  std::shared_ptr<npe::NpeModel> npe_model;
  std::shared_ptr<cvae::CvaeModel> cvae_model;
  std::shared_ptr<cvae::DetModel> det_model;
  std::shared_ptr<npe::NpeModel> wk_model;
  std::vector<std::shared_ptr<npe::NpeModel>> sup_models;
  std::map<std::string, std::vector<pipeline::SeriesPrediction>> preds;
  std::vector<eval::ScoreRow> scores;
};

RunArtifacts execute_run(const BenchSpec& spec, const Datasets& data,
                         const std::vector<eval::KfoldSplit>& folds,
                         std::uint64_t run_seed, const fs::path& out_dir) {
  RunArtifacts art;
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&]() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
  };
  auto note = [&](const char* stage) {
    std::printf("[bench]   %-14s t=%.0fs\n", stage, elapsed());
    std::fflush(stdout);
  };

  npe::NpeConfig ncfg;
  ncfg.batch_size = spec.batch_size;
  ncfg.max_epochs = spec.npe_epochs;
  ncfg.seed = derive_seed(run_seed, "run.npe");
  art.npe_model = std::make_shared<npe::NpeModel>(
      npe::train_npe(data.insilico, ncfg).model);
  note("npe trained");

  cvae::CvaeConfig ccfg;
  ccfg.batch_size = spec.batch_size;
  ccfg.max_epochs = spec.cvae_epochs;
  ccfg.seed = derive_seed(run_seed, "run.cvae");
  art.cvae_model = std::make_shared<cvae::CvaeModel>(
      cvae::train_cvae(data.paired, ccfg).model);
  note("cvae trained");

  cvae::DetConfig dcfg;
  dcfg.batch_size = spec.batch_size;
  dcfg.max_epochs = spec.det_epochs;
  dcfg.seed = derive_seed(run_seed, "run.det");
  art.det_model = std::make_shared<cvae::DetModel>(
      cvae::train_det_translator(data.paired, dcfg).model);
  note("det trained");

  npe::NpeConfig wcfg = ncfg;
  wcfg.max_epochs = spec.wk_epochs;
  wcfg.seed = derive_seed(run_seed, "run.wk");
  art.wk_model = std::make_shared<npe::NpeModel>(
      npe::train_npe(data.insilico, wcfg, /*use_windkessel_ppg=*/true).model);
  note("wk trained");

  for (std::size_t f = 0; f < folds.size(); ++f) {
    const auto train_recs = pipeline::supervised_records(data.evalset, folds[f].train);
    const auto val_recs = pipeline::supervised_records(data.evalset, folds[f].val);
    npe::NpeConfig scfg = ncfg;
    scfg.max_epochs = spec.sup_epochs;
    scfg.seed = derive_seed(run_seed, "run.sup", static_cast<std::uint64_t>(f));
    art.sup_models.push_back(std::make_shared<npe::NpeModel>(
        npe::train_npe(train_recs, scfg, false, &val_recs).model));
  }
  note("sup trained");

  if (!out_dir.empty()) {
    const fs::path ck = out_dir / "checkpoints" / ("run_" + std::to_string(run_seed));
    io::write_checkpoint(art.npe_model->to_checkpoint(), ck / "npe");
    io::write_checkpoint(art.cvae_model->to_checkpoint(), ck / "cvae");
    io::write_checkpoint(art.det_model->to_checkpoint(), ck / "det");
    io::write_checkpoint(art.wk_model->to_checkpoint(), ck / "wk");
    for (std::size_t f = 0; f < art.sup_models.size(); ++f) {
      io::write_checkpoint(art.sup_models[f]->to_checkpoint(),
                           ck / ("sup_fold" + std::to_string(f)));
    }
  }

  // Predictions on the evaluation subjects.
  pipeline::HybridModel hybrid{art.cvae_model, art.npe_model, spec.m, spec.k};
  pipeline::BaselineModels base;
  base.npe = art.npe_model;
  base.npe_windkessel = art.wk_model;
  base.det = art.det_model;
  base.m = spec.m;
  base.k = spec.k;

  art.preds["hybrid"] = pipeline::predict_series(
      data.evalset, derive_seed(run_seed, "pred.hybrid"),
      [&](const SeriesRecord& rec, std::uint64_t s) {
        return pipeline::predict(rec.ppg, hybrid, s);
      });
  art.preds["det_translator"] = pipeline::predict_series(
      data.evalset, derive_seed(run_seed, "pred.det"),
      [&](const SeriesRecord& rec, std::uint64_t s) {
        return pipeline::predict_baseline(pipeline::BaselineKind::DetTranslator,
                                          rec.ppg, base, s);
      });
  art.preds["apw"] = pipeline::predict_series(
      data.evalset, derive_seed(run_seed, "pred.apw"),
      [&](const SeriesRecord& rec, std::uint64_t s) {
        return pipeline::predict_baseline(pipeline::BaselineKind::ApwDirect,
                                          *rec.apw, base, s);
      });
  art.preds["ppg_windkessel"] = pipeline::predict_series(
      data.evalset, derive_seed(run_seed, "pred.wk"),
      [&](const SeriesRecord& rec, std::uint64_t s) {
        return pipeline::predict_baseline(pipeline::BaselineKind::PpgWindkessel,
                                          rec.ppg, base, s);
      });

  // Supervised baseline: each subject predicted by the fold in which it is
  // a test subject.
  {
    std::vector<pipeline::SeriesPrediction> sup_rows;
    for (std::size_t f = 0; f < folds.size(); ++f) {
      std::vector<SubjectSeries> test_subjects;
      for (const auto& s : data.evalset) {
        if (std::find(folds[f].test.begin(), folds[f].test.end(), s.subject_id) !=
            folds[f].test.end()) {
          test_subjects.push_back(s);
        }
      }
      pipeline::BaselineModels fold_base = base;
      fold_base.npe_supervised = art.sup_models[f];
      auto rows = pipeline::predict_series(
          test_subjects, derive_seed(run_seed, "pred.sup", static_cast<std::uint64_t>(f)),
          [&](const SeriesRecord& rec, std::uint64_t s) {
            return pipeline::predict_baseline(pipeline::BaselineKind::PpgSupervised,
                                              rec.ppg, fold_base, s);
          });
      sup_rows.insert(sup_rows.end(), rows.begin(), rows.end());
    }
    art.preds["ppg_supervised"] = std::move(sup_rows);
  }

  note("predictions");
  for (const auto& [method, rows] : art.preds) {
    if (!out_dir.empty()) {
      const fs::path pd = out_dir / "predictions";
      fs::create_directories(pd);
      pipeline::write_predictions_csv(
          rows, pd / ("run_" + std::to_string(run_seed) + "_" + method + ".csv"));
    }
    const auto scored =
        pipeline::score_predictions(data.evalset, rows, method, run_seed);
    art.scores.insert(art.scores.end(), scored.begin(), scored.end());
  }
  return art;
}

double median_rho(const std::vector<eval::ScoreRow>& scores,
                  const std::string& method, const std::string& param,
                  std::uint64_t run_seed) {
  std::vector<double> v;
  for (const auto& r : scores) {
    if (r.method == method && r.param == param && r.run_seed == run_seed && r.rho) {
      v.push_back(*r.rho);
    }
  }
  if (v.empty()) return std::nan("");
  return eval::median(v);
}

}  // namespace

BenchResult run_bench(const BenchSpec& spec, const fs::path& out_dir) {
  const Thresholds thr;
  BenchResult result;
  fs::create_directories(out_dir);
  {
    std::ofstream f(out_dir / "resolved_config.json");
    f << spec.to_json().dump(2) << "\n";
  }

  auto push = [&](CriterionResult c) {
    std::printf("[%s] criterion %2d: %s — %s\n",
                !c.ran ? "SKIP" : (c.pass ? "PASS" : "FAIL"), c.id,
                c.name.c_str(), c.detail.c_str());
    std::fflush(stdout);
    result.criteria.push_back(std::move(c));
  };

  push(criterion_flow_correctness(thr));
  push(criterion_loss_analytic(thr));
  push(criterion_metric_fidelity(thr));
  push(criterion_aggregation(spec));

  // ---- datasets ----
  Datasets data;
  std::map<std::string, std::map<std::string, std::uint64_t>> dataset_hashes;
  try {
    data = generate_datasets(spec);
    io::write_dataset(data.insilico, out_dir / "datasets" / "insilico",
                      json{{"seed", derive_seed(spec.master_seed, "bench.sim")},
                           {"nominal_n", spec.insilico_n}});
    io::write_dataset(data.paired, out_dir / "datasets" / "paired");
    io::write_dataset(data.evalset, out_dir / "datasets" / "eval");
    for (const char* name : {"insilico", "paired", "eval"}) {
      dataset_hashes[name] = hash_dataset_dir(out_dir / "datasets" / name);
    }
  } catch (const std::exception& e) {
    for (int id : {3, 4, 5, 6, 7, 9}) {
      push({id, "not run (dataset generation failed)", false, false, e.what()});
    }
    result.summary = json{{"error", e.what()}};
    return result;
  }

  std::vector<std::string> subject_ids;
  for (const auto& s : data.evalset) subject_ids.push_back(s.subject_id);
  const auto folds = eval::subjectwise_kfold(
      subject_ids, spec.folds, derive_seed(spec.master_seed, "bench.folds"));

  // ---- per-run training and prediction ----
  std::vector<eval::ScoreRow> all_scores;
  RunArtifacts run1;
  bool runs_ok = true;
  std::string runs_err;
  std::vector<std::pair<double, double>> sv_hybrid_vs_det;  // per run
  try {
    for (std::size_t ri = 0; ri < spec.run_seeds.size(); ++ri) {
      const std::uint64_t rs = spec.run_seeds[ri];
      std::printf("[bench] run %zu/%zu (seed %llu)\n", ri + 1,
                  spec.run_seeds.size(), static_cast<unsigned long long>(rs));
      std::fflush(stdout);
      RunArtifacts art = execute_run(spec, data, folds, rs, out_dir);
      all_scores.insert(all_scores.end(), art.scores.begin(), art.scores.end());
      sv_hybrid_vs_det.emplace_back(median_rho(art.scores, "hybrid", "sv", rs),
                                    median_rho(art.scores, "det_translator", "sv", rs));
      if (ri == 0) run1 = std::move(art);
    }
  } catch (const std::exception& e) {
    runs_ok = false;
    runs_err = e.what();
  }

  if (!all_scores.empty()) {
    result.report = eval::aggregate_report(
        all_scores, out_dir / "report",
        json{{"run_seeds", spec.run_seeds},
             {"master_seed", spec.master_seed},
             {"m", spec.m},
             {"k", spec.k}});
  }

  // ---- criterion 3: in-silico posterior recovery ----
  if (runs_ok) {
    try {
      CriterionResult c{3, "posterior recovery on held-out simulations", true, false, ""};
      insilico::BuildOptions opts;
      opts.n = 1000;
      opts.prior = spec.benchmark.prior;
      opts.noise = spec.benchmark.apw_noise;
      opts.filter = spec.benchmark.filter;
      opts.seed = derive_seed(spec.master_seed, "bench.heldout");
      const auto held = insilico::build_insilico_dataset(opts);
      std::vector<double> true_hr, mean_hr, true_sv, mean_sv;
      for (std::size_t i = 0; i < held.size(); ++i) {
        const auto draws = run1.npe_model->sample_posterior(
            held[i].apw, 100, derive_seed(spec.master_seed, "recovery", i));
        double hr = 0.0, sv = 0.0;
        for (const auto& d : draws) {
          hr += d.hr;
          sv += d.sv;
        }
        mean_hr.push_back(hr / static_cast<double>(draws.size()));
        mean_sv.push_back(sv / static_cast<double>(draws.size()));
        true_hr.push_back(held[i].theta.hr);
        true_sv.push_back(held[i].theta.sv);
      }
      const double rho_hr = eval::spearman(mean_hr, true_hr).value_or(0.0);
      const double rho_sv = eval::spearman(mean_sv, true_sv).value_or(0.0);
      c.pass = rho_hr >= thr.recovery_hr && rho_sv >= thr.recovery_sv;
      c.detail = strf("HR rho %.4f (>= %.2f), SV rho %.4f (>= %.2f), n=%zu",
                      rho_hr, thr.recovery_hr, rho_sv, thr.recovery_sv, held.size());
      push(std::move(c));
    } catch (const std::exception& e) {
      push({3, "posterior recovery", false, false, e.what()});
    }
  } else {
    push({3, "posterior recovery", false, false, runs_err});
  }

  // ---- criterion 4: simulation-based calibration ----
  if (runs_ok) {
    try {
      CriterionResult c{4, "simulation-based calibration rank uniformity", true,
                        false, ""};
      insilico::BuildOptions opts;
      opts.n = 625;
      opts.prior = spec.benchmark.prior;
      opts.noise = spec.benchmark.apw_noise;
      opts.filter = spec.benchmark.filter;
      opts.seed = derive_seed(spec.master_seed, "bench.sbc");
      auto sims = insilico::build_insilico_dataset(opts);
      if (sims.size() > 500) sims.resize(500);
      const int k = 100;
      std::vector<std::vector<double>> u(kNumParams);
      for (std::size_t i = 0; i < sims.size(); ++i) {
        const auto draws = run1.npe_model->sample_posterior(
            sims[i].apw, k, derive_seed(spec.master_seed, "sbc.draw", i));
        const Eigen::Vector4d truth = sims[i].theta.to_vector();
        for (int p = 0; p < kNumParams; ++p) {
          int rank = 0;
          for (const auto& d : draws) {
            if (d.to_vector()[p] < truth[p]) ++rank;
          }
          u[static_cast<std::size_t>(p)].push_back((rank + 0.5) / (k + 1.0));
        }
      }
      double min_p = 1.0;
      std::string ps;
      for (int p = 0; p < kNumParams; ++p) {
        const double pv = ks_uniform_pvalue(u[static_cast<std::size_t>(p)]);
        min_p = std::min(min_p, pv);
        ps += strf("%s=%.3f ", param_name(p), pv);
      }
      c.pass = min_p > thr.sbc_ks_p;
      c.detail = strf("KS p-values: %s(all > %.2f), n=%zu, k=%d", ps.c_str(),
                      thr.sbc_ks_p, sims.size(), k);
      push(std::move(c));
    } catch (const std::exception& e) {
      push({4, "simulation-based calibration", false, false, e.what()});
    }
  } else {
    push({4, "simulation-based calibration", false, false, runs_err});
  }

  // ---- criterion 5: hybrid end-to-end trend correlation ----
  if (runs_ok) {
    const double hr = median_rho(run1.scores, "hybrid", "hr", spec.run_seeds[0]);
    const double sv = median_rho(run1.scores, "hybrid", "sv", spec.run_seeds[0]);
    CriterionResult c{5, "hybrid end-to-end trend correlation", true, false, ""};
    c.pass = hr >= thr.hybrid_hr && sv >= thr.hybrid_sv;
    c.detail = strf("median per-subject rho: HR %.4f (>= %.2f), SV %.4f (>= %.2f)",
                    hr, thr.hybrid_hr, sv, thr.hybrid_sv);
    push(std::move(c));
  } else {
    push({5, "hybrid end-to-end trend correlation", false, false, runs_err});
  }

  // ---- criterion 6: generative vs deterministic ordering ----
  if (runs_ok) {
    int wins = 0;
    std::string detail;
    for (std::size_t ri = 0; ri < sv_hybrid_vs_det.size(); ++ri) {
      const auto [h, d] = sv_hybrid_vs_det[ri];
      if (h >= d) ++wins;
      detail += strf("run%zu: %.3f vs %.3f; ", ri + 1, h, d);
    }
    CriterionResult c{6, "generative >= deterministic SV ordering", true, false, ""};
    c.pass = wins >= 2;
    c.detail = detail + strf("hybrid wins %d/%zu (need >= 2)", wins,
                             sv_hybrid_vs_det.size());
    push(std::move(c));
  } else {
    push({6, "generative vs deterministic ordering", false, false, runs_err});
  }

  // ---- criterion 7: uncertainty-based rejection ----
  if (runs_ok) {
    try {
      CriterionResult c{7, "uncertainty ranking flags corrupted segments", true,
                        false, ""};
      // 300 segments from the first subjects, 10% corrupted with 10x noise.
      std::vector<WaveformSegment> segments;
      std::vector<double> base_sigma;
      const std::uint64_t eval_seed = derive_seed(spec.master_seed, "bench.eval");
      for (const auto& s : data.evalset) {
        const int subj_index = std::stoi(s.subject_id.substr(1));
        const auto tr = pipeline::draw_transfer(
            spec.benchmark.transfer,
            derive_seed(eval_seed, "bench.subject",
                        static_cast<std::uint64_t>(subj_index)));
        for (const auto& rec : s.records) {
          segments.push_back(rec.ppg);
          base_sigma.push_back(tr.noise_sigma);
          if (segments.size() >= 300) break;
        }
        if (segments.size() >= 300) break;
      }
      const int n_corrupt = static_cast<int>(segments.size()) / 10;
      std::vector<int> idx(segments.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
      Rng rng(derive_seed(spec.master_seed, "bench.corrupt"));
      rng.shuffle(idx);
      std::vector<bool> corrupted(segments.size(), false);
      for (int i = 0; i < n_corrupt; ++i) {
        const int j = idx[static_cast<std::size_t>(i)];
        insilico::NoiseSpec noisy;
        noisy.sigma_gauss = 10.0 * base_sigma[static_cast<std::size_t>(j)];
        noisy.sigma_red = 5.0 * base_sigma[static_cast<std::size_t>(j)];
        noisy.seed = derive_seed(spec.master_seed, "bench.corrupt.noise",
                                 static_cast<std::uint64_t>(j));
        segments[static_cast<std::size_t>(j)] = insilico::add_measurement_noise(
            segments[static_cast<std::size_t>(j)], noisy);
        corrupted[static_cast<std::size_t>(j)] = true;
      }
      pipeline::HybridModel hybrid{run1.cvae_model, run1.npe_model, spec.m, spec.k};
      const auto ranked = pipeline::rank_by_uncertainty(
          segments, hybrid, Report::Hr, derive_seed(spec.master_seed, "bench.rank"));
      const int top = static_cast<int>(segments.size()) / 5;
      int caught = 0;
      for (int i = 0; i < top; ++i) {
        if (corrupted[static_cast<std::size_t>(ranked[static_cast<std::size_t>(i)].first)]) {
          ++caught;
        }
      }
      const double frac = static_cast<double>(caught) / n_corrupt;
      c.pass = frac >= thr.reject_enrichment;
      c.detail = strf("%d/%d corrupted in top %d of %zu (%.0f%%, need >= %.0f%%)",
                      caught, n_corrupt, top, segments.size(), 100.0 * frac,
                      100.0 * thr.reject_enrichment);
      push(std::move(c));
    } catch (const std::exception& e) {
      push({7, "uncertainty-based rejection", false, false, e.what()});
    }
  } else {
    push({7, "uncertainty-based rejection", false, false, runs_err});
  }

  // ---- criterion 9: determinism ----
  if (runs_ok) {
    try {
      CriterionResult c{9, "determinism: datasets bit-exact, correlations stable",
                        true, false, ""};
      // Regenerate the datasets and byte-compare.
      const Datasets again = generate_datasets(spec);
      const fs::path tmp = out_dir / "determinism_check";
      fs::remove_all(tmp);
      io::write_dataset(again.insilico, tmp / "insilico",
                        json{{"seed", derive_seed(spec.master_seed, "bench.sim")},
                             {"nominal_n", spec.insilico_n}});
      io::write_dataset(again.paired, tmp / "paired");
      io::write_dataset(again.evalset, tmp / "eval");
      bool bits_ok = true;
      for (const char* name : {"insilico", "paired", "eval"}) {
        const auto h = hash_dataset_dir(tmp / name);
        if (h != dataset_hashes[name]) bits_ok = false;
      }
      fs::remove_all(tmp);

      // Re-run the first seed end to end and compare correlations.
      RunArtifacts redo = execute_run(spec, again, folds, spec.run_seeds[0], {});
      double max_dev = 0.0;
      int compared = 0;
      for (const auto& a : run1.scores) {
        for (const auto& b : redo.scores) {
          if (a.method == b.method && a.param == b.param && a.subject == b.subject) {
            if (a.rho.has_value() != b.rho.has_value()) max_dev = 1.0;
            if (a.rho && b.rho) {
              max_dev = std::max(max_dev, std::abs(*a.rho - *b.rho));
            }
            ++compared;
          }
        }
      }
      c.pass = bits_ok && compared > 0 && max_dev < thr.determinism_rho;
      c.detail = strf("datasets %s; %d correlations compared, max |drho| %.2e (< %.0e)",
                      bits_ok ? "bit-exact" : "DIFFER", compared, max_dev,
                      thr.determinism_rho);
      push(std::move(c));
    } catch (const std::exception& e) {
      push({9, "determinism", false, false, e.what()});
    }
  } else {
    push({9, "determinism", false, false, runs_err});
  }

  std::sort(result.criteria.begin(), result.criteria.end(),
            [](const CriterionResult& a, const CriterionResult& b) {
              return a.id < b.id;
            });
  result.all_pass = true;
  for (const auto& c : result.criteria) {
    result.all_pass = result.all_pass && c.ran && c.pass;
  }

  json summary;
  summary["all_pass"] = result.all_pass;
  summary["criteria"] = json::array();
  for (const auto& c : result.criteria) {
    summary["criteria"].push_back(json{{"id", c.id},
                                       {"name", c.name},
                                       {"ran", c.ran},
                                       {"pass", c.pass},
                                       {"detail", c.detail}});
  }
  summary["spec"] = spec.to_json();
  result.summary = summary;
  {
    std::ofstream f(out_dir / "bench_summary.json");
    f << summary.dump(2) << "\n";
  }
  {
    std::ofstream f(out_dir / "bench_summary.txt");
    for (const auto& c : result.criteria) {
      f << (!c.ran ? "[SKIP]" : (c.pass ? "[PASS]" : "[FAIL]")) << " criterion "
        << c.id << ": " << c.name << " — " << c.detail << "\n";
    }
    f << (result.all_pass ? "ALL CRITERIA PASS\n" : "CRITERIA FAILED\n");
  }
  return result;
}

}  // namespace hemo::bench
