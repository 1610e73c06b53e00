// Command-line surface for the PPG-to-hemodynamics pipeline: simulation,
// model training, prediction, uncertainty ranking, evaluation, and the
// desk-scale benchmark. All commands are reproducible from a single seed;
// per-stage streams derive from it by counter-based splitting (core/rng.hpp).

#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include "hemo/bench/bench.hpp"
#include "hemo/core/config_json.hpp"
#include "hemo/core/io.hpp"
#include "hemo/cvae/cvae.hpp"
#include "hemo/insilico/insilico.hpp"
#include "hemo/npe/npe.hpp"
#include "hemo/pipeline/benchmark.hpp"
#include "hemo/pipeline/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hemo;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr int kExitConfig = 3;

fs::path default_out(const std::string& command) {
  const char* root = std::getenv("HEMO_OUT_ROOT");
  return fs::path(root ? root : "out") / command;
}

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }
  require_keys(j, {"seed", "prior", "noise", "filter", "cvae", "npe", "det",
                   "hybrid", "eval", "bench"},
               "config");
  return j;
}

void write_resolved(const fs::path& out_dir, const json& resolved) {
  fs::create_directories(out_dir);
  std::ofstream f(out_dir / "resolved_config.json");
  f << resolved.dump(2) << "\n";
}

cvae::CvaeConfig cvae_config(const json& cfg) {
  json section = cfg.value("cvae", json::object());
  require_keys(section, {"latent_dim", "lr", "batch_size", "max_epochs",
                         "patience", "seed"},
               "cvae");
  try {
    return cvae::CvaeConfig::from_json(section);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

npe::NpeConfig npe_config(const json& cfg) {
  json section = cfg.value("npe", json::object());
  require_keys(section,
               {"flow_steps", "embedding_dim", "lr", "batch_size", "max_epochs",
                "val_fraction", "patience", "mlp_hidden", "flow_hidden", "seed"},
               "npe");
  try {
    return npe::NpeConfig::from_json(section);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

cvae::DetConfig det_config(const json& cfg) {
  json section = cfg.value("det", json::object());
  require_keys(section, {"lr", "batch_size", "max_epochs", "patience", "seed"},
               "det");
  try {
    return cvae::DetConfig::from_json(section);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

std::shared_ptr<npe::NpeModel> load_npe(const std::string& path) {
  return std::make_shared<npe::NpeModel>(
      npe::NpeModel::from_checkpoint(io::read_checkpoint(path)));
}

std::shared_ptr<cvae::CvaeModel> load_cvae(const std::string& path) {
  return std::make_shared<cvae::CvaeModel>(
      cvae::CvaeModel::from_checkpoint(io::read_checkpoint(path)));
}

std::shared_ptr<cvae::DetModel> load_det(const std::string& path) {
  return std::make_shared<cvae::DetModel>(
      cvae::DetModel::from_checkpoint(io::read_checkpoint(path)));
}

struct Cli {
  // simulate
  int sim_n = 1000;
  bool sim_with_ppg = false;
  // shared
  std::string config_path;
  std::string data_dir;
  std::string out_path;
  std::uint64_t seed = 7;
  int epochs = -1;
  // predict / rank
  std::string method = "hybrid";
  std::string cvae_ckpt, npe_ckpt, det_ckpt, model_ckpt;
  int m = 10, k = 20;
  std::string param = "hr";
  // baseline training
  std::string kind = "wk";
  int folds = 3;
  int fold_index = 0;
  // evaluate
  std::vector<std::string> pred_args;
  std::string truth_dir;
  int window = 16;
  // simulate noise overrides
  double sigma_gauss = 2.0;
  double sigma_red = 2.0;
};

int cmd_simulate(const Cli& a, const json& cfg) {
  insilico::BuildOptions opts;
  opts.n = a.sim_n;
  opts.seed = a.seed;
  opts.with_windkessel_ppg = a.sim_with_ppg;
  if (cfg.contains("prior")) opts.prior = prior_from_json(cfg.at("prior"));
  if (cfg.contains("noise")) opts.noise = noise_from_json(cfg.at("noise"));
  if (cfg.contains("filter")) opts.filter = filter_from_json(cfg.at("filter"));
  opts.noise.sigma_gauss = a.sigma_gauss;
  opts.noise.sigma_red = a.sigma_red;

  const fs::path out = a.out_path.empty() ? default_out("simulate") : fs::path(a.out_path);
  const auto records = insilico::build_insilico_dataset(opts);
  json settings{{"prior", to_json(opts.prior)},
                {"noise", to_json(opts.noise)},
                {"filter", to_json(opts.filter)},
                {"seed", opts.seed},
                {"nominal_n", opts.n}};
  io::write_dataset(records, out, settings);
  write_resolved(out, settings);
  std::cout << "wrote " << records.size() << " records to " << out << "\n";
  return 0;
}

int cmd_train_cvae(const Cli& a, const json& cfg) {
  auto c = cvae_config(cfg);
  if (a.epochs >= 0) c.max_epochs = a.epochs;
  c.seed = a.seed;
  const auto pairs = io::read_paired(a.data_dir);
  auto r = cvae::train_cvae(pairs, c);
  const fs::path out = a.out_path.empty() ? default_out("train-cvae") : fs::path(a.out_path);
  io::write_checkpoint(r.checkpoint, out);
  write_resolved(out, json{{"cvae", c.to_json()}, {"data", a.data_dir}});
  std::cout << "best val loss " << r.log.best_val << " at epoch "
            << r.log.best_epoch << "; checkpoint in " << out << "\n";
  return 0;
}

int cmd_train_npe(const Cli& a, const json& cfg) {
  auto c = npe_config(cfg);
  if (a.epochs >= 0) c.max_epochs = a.epochs;
  c.seed = a.seed;
  const auto records = io::read_labeled_sim(a.data_dir);
  auto r = npe::train_npe(records, c);
  const fs::path out = a.out_path.empty() ? default_out("train-npe") : fs::path(a.out_path);
  io::write_checkpoint(r.checkpoint, out);
  write_resolved(out, json{{"npe", c.to_json()}, {"data", a.data_dir}});
  std::cout << "best val loss " << r.log.best_val << " at epoch "
            << r.log.best_epoch << "; checkpoint in " << out << "\n";
  return 0;
}

int cmd_train_det(const Cli& a, const json& cfg) {
  auto c = det_config(cfg);
  if (a.epochs >= 0) c.max_epochs = a.epochs;
  c.seed = a.seed;
  const auto pairs = io::read_paired(a.data_dir);
  auto r = cvae::train_det_translator(pairs, c);
  const fs::path out = a.out_path.empty() ? default_out("train-det") : fs::path(a.out_path);
  io::write_checkpoint(r.checkpoint, out);
  write_resolved(out, json{{"det", c.to_json()}, {"data", a.data_dir}});
  std::cout << "best val loss " << r.log.best_val << " at epoch "
            << r.log.best_epoch << "; checkpoint in " << out << "\n";
  return 0;
}

int cmd_train_baseline(const Cli& a, const json& cfg) {
  auto c = npe_config(cfg);
  if (a.epochs >= 0) c.max_epochs = a.epochs;
  c.seed = a.seed;
  const fs::path out =
      a.out_path.empty() ? default_out("train-baseline") : fs::path(a.out_path);
  if (a.kind == "wk") {
    const auto records = io::read_labeled_sim(a.data_dir);
    auto r = npe::train_npe(records, c, /*use_windkessel_ppg=*/true);
    io::write_checkpoint(r.checkpoint, out);
    write_resolved(out, json{{"npe", c.to_json()}, {"kind", "wk"}});
    std::cout << "windkessel baseline: best val " << r.log.best_val
              << "; checkpoint in " << out << "\n";
    return 0;
  }
  if (a.kind == "supervised") {
    const auto subjects = io::read_subject_series(a.data_dir);
    std::vector<std::string> ids;
    for (const auto& s : subjects) ids.push_back(s.subject_id);
    const auto folds = eval::subjectwise_kfold(ids, a.folds, a.seed);
    if (a.fold_index < 0 || a.fold_index >= static_cast<int>(folds.size())) {
      throw ConfigError("fold index out of range");
    }
    const auto& fold = folds[static_cast<std::size_t>(a.fold_index)];
    const auto train_recs = pipeline::supervised_records(subjects, fold.train);
    const auto val_recs = pipeline::supervised_records(subjects, fold.val);
    auto r = npe::train_npe(train_recs, c, false, &val_recs);
    io::write_checkpoint(r.checkpoint, out);
    json fold_json{{"train", fold.train}, {"val", fold.val}, {"test", fold.test}};
    write_resolved(out, json{{"npe", c.to_json()},
                             {"kind", "supervised"},
                             {"fold", fold_json}});
    std::cout << "supervised baseline fold " << a.fold_index << ": best val "
              << r.log.best_val << "; checkpoint in " << out << "\n";
    return 0;
  }
  throw ConfigError("unknown baseline kind '" + a.kind + "' (wk|supervised)");
}

int cmd_predict(const Cli& a, const json&) {
  const auto subjects = io::read_subject_series(a.data_dir);
  const fs::path out = a.out_path.empty()
                           ? default_out("predict") / (a.method + ".csv")
                           : fs::path(a.out_path);
  if (!out.parent_path().empty()) fs::create_directories(out.parent_path());

  std::vector<pipeline::SeriesPrediction> rows;
  if (a.method == "hybrid") {
    pipeline::HybridModel h{load_cvae(a.cvae_ckpt), load_npe(a.npe_ckpt), a.m, a.k};
    rows = pipeline::predict_series(
        subjects, a.seed, [&](const SeriesRecord& rec, std::uint64_t s) {
          return pipeline::predict(rec.ppg, h, s);
        });
  } else {
    const auto kind = pipeline::baseline_from(a.method);
    pipeline::BaselineModels base;
    base.m = a.m;
    base.k = a.k;
    if (kind == pipeline::BaselineKind::ApwDirect) base.npe = load_npe(a.npe_ckpt);
    if (kind == pipeline::BaselineKind::DetTranslator) {
      base.npe = load_npe(a.npe_ckpt);
      base.det = load_det(a.det_ckpt);
    }
    if (kind == pipeline::BaselineKind::PpgWindkessel) {
      base.npe_windkessel = load_npe(a.model_ckpt);
    }
    if (kind == pipeline::BaselineKind::PpgSupervised) {
      base.npe_supervised = load_npe(a.model_ckpt);
    }
    rows = pipeline::predict_series(
        subjects, a.seed, [&](const SeriesRecord& rec, std::uint64_t s) {
          const WaveformSegment& input =
              kind == pipeline::BaselineKind::ApwDirect ? *rec.apw : rec.ppg;
          return pipeline::predict_baseline(kind, input, base, s);
        });
  }
  pipeline::write_predictions_csv(rows, out);
  write_resolved(out.parent_path().empty() ? "." : out.parent_path(),
                 json{{"method", a.method},
                      {"m", a.m},
                      {"k", a.k},
                      {"seed", a.seed},
                      {"data", a.data_dir}});
  std::cout << "wrote " << rows.size() << " predictions to " << out << "\n";
  return 0;
}

int cmd_rank(const Cli& a, const json&) {
  const auto subjects = io::read_subject_series(a.data_dir);
  std::vector<WaveformSegment> segments;
  std::vector<std::pair<std::string, double>> origin;
  for (const auto& s : subjects) {
    for (const auto& rec : s.records) {
      segments.push_back(rec.ppg);
      origin.emplace_back(s.subject_id, rec.timestamp_s);
    }
  }
  Report rep;
  if (a.param == "hr") rep = Report::Hr;
  else if (a.param == "sv") rep = Report::Sv;
  else if (a.param == "co") rep = Report::Co;
  else if (a.param == "svr") rep = Report::Svr;
  else throw ConfigError("param must be one of hr, sv, co, svr");

  pipeline::HybridModel h{load_cvae(a.cvae_ckpt), load_npe(a.npe_ckpt), a.m, a.k};
  const auto ranked = pipeline::rank_by_uncertainty(segments, h, rep, a.seed);

  const fs::path out = a.out_path.empty()
                           ? default_out("rank-uncertainty") / "ranked.csv"
                           : fs::path(a.out_path);
  if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
  std::ofstream f(out);
  f << "rank,segment_index,subject,timestamp," << a.param << "_std\n";
  f.precision(10);
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    const auto [idx, std_v] = ranked[r];
    f << r << ',' << idx << ',' << origin[static_cast<std::size_t>(idx)].first
      << ',' << origin[static_cast<std::size_t>(idx)].second << ',' << std_v
      << '\n';
  }
  std::cout << "wrote ranking of " << ranked.size() << " segments to " << out
            << "\n";
  return 0;
}

int cmd_evaluate(const Cli& a, const json&) {
  const auto truth = io::read_subject_series(a.truth_dir);
  std::vector<eval::ScoreRow> rows;
  std::map<std::string, std::uint64_t> run_counter;
  for (const auto& spec : a.pred_args) {
    const auto pos = spec.find('=');
    if (pos == std::string::npos) {
      throw ConfigError("--pred expects name=path, got '" + spec + "'");
    }
    const std::string name = spec.substr(0, pos);
    const std::string path = spec.substr(pos + 1);
    const auto preds = pipeline::read_predictions_csv(path);
    const std::uint64_t run = run_counter[name]++;
    const auto scored =
        pipeline::score_predictions(truth, preds, name, run, a.window);
    rows.insert(rows.end(), scored.begin(), scored.end());
  }
  const fs::path out = a.out_path.empty() ? default_out("evaluate") : fs::path(a.out_path);
  const auto rep = eval::aggregate_report(rows, out,
                                          json{{"window", a.window},
                                               {"truth", a.truth_dir}});
  std::cout << "report with " << rep.rows.size() << " rows in " << out << "\n";
  for (const auto& w : rep.warnings) std::cout << "warning: " << w << "\n";
  return 0;
}

int cmd_bench(const Cli& a, const json& cfg) {
  bench::BenchSpec spec;
  if (cfg.contains("bench")) {
    require_keys(cfg.at("bench"),
                 {"insilico_n", "paired_n", "paired_subjects", "eval_subjects",
                  "eval_segments", "npe_epochs", "cvae_epochs", "det_epochs",
                  "wk_epochs", "sup_epochs", "folds", "m", "k", "master_seed", "batch_size",
                  "run_seeds"},
                 "bench");
    spec = bench::BenchSpec::from_json(cfg.at("bench"));
  }
  spec.master_seed = a.seed;
  if (cfg.contains("prior")) spec.benchmark.prior = prior_from_json(cfg.at("prior"));
  if (cfg.contains("noise")) spec.benchmark.apw_noise = noise_from_json(cfg.at("noise"));
  if (cfg.contains("filter")) spec.benchmark.filter = filter_from_json(cfg.at("filter"));

  const fs::path out = a.out_path.empty() ? default_out("bench") : fs::path(a.out_path);
  const auto result = bench::run_bench(spec, out);
  std::cout << (result.all_pass ? "ALL CRITERIA PASS" : "CRITERIA FAILED")
            << "; summary in " << out / "bench_summary.txt" << "\n";
  return result.all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PPG-based cardiovascular parameter inference via hybrid "
               "simulation-based learning"};
  app.require_subcommand(1);
  Cli a;

  auto* sim = app.add_subcommand("simulate", "Generate a labeled in-silico APW dataset");
  sim->add_option("--n", a.sim_n, "number of prior draws");
  sim->add_option("--seed", a.seed, "seed");
  sim->add_option("--out", a.out_path, "output dataset directory");
  sim->add_option("--config", a.config_path, "experiment config JSON");
  sim->add_option("--sigma-gauss", a.sigma_gauss, "white noise std [mmHg]");
  sim->add_option("--sigma-red", a.sigma_red, "red noise std [mmHg]");
  sim->add_flag("--with-ppg", a.sim_with_ppg, "also derive Windkessel PPGs");

  auto* tc = app.add_subcommand("train-cvae", "Train the PPG->APW conditional VAE");
  tc->add_option("--data", a.data_dir, "paired dataset directory")->required();
  tc->add_option("--out", a.out_path, "checkpoint directory");
  tc->add_option("--config", a.config_path, "experiment config JSON");
  tc->add_option("--seed", a.seed, "seed");
  tc->add_option("--epochs", a.epochs, "override max epochs");

  auto* tn = app.add_subcommand("train-npe", "Train the APW posterior estimator");
  tn->add_option("--data", a.data_dir, "in-silico dataset directory")->required();
  tn->add_option("--out", a.out_path, "checkpoint directory");
  tn->add_option("--config", a.config_path, "experiment config JSON");
  tn->add_option("--seed", a.seed, "seed");
  tn->add_option("--epochs", a.epochs, "override max epochs");

  auto* td = app.add_subcommand("train-det", "Train the deterministic PPG->APW translator");
  td->add_option("--data", a.data_dir, "paired dataset directory")->required();
  td->add_option("--out", a.out_path, "checkpoint directory");
  td->add_option("--config", a.config_path, "experiment config JSON");
  td->add_option("--seed", a.seed, "seed");
  td->add_option("--epochs", a.epochs, "override max epochs");

  auto* tb = app.add_subcommand("train-baseline",
                                "Train a baseline posterior (wk | supervised)");
  tb->add_option("--kind", a.kind, "wk | supervised")->required();
  tb->add_option("--data", a.data_dir, "dataset directory")->required();
  tb->add_option("--out", a.out_path, "checkpoint directory");
  tb->add_option("--config", a.config_path, "experiment config JSON");
  tb->add_option("--seed", a.seed, "seed");
  tb->add_option("--epochs", a.epochs, "override max epochs");
  tb->add_option("--folds", a.folds, "subject-wise folds (supervised)");
  tb->add_option("--fold-index", a.fold_index, "which fold to train (supervised)");

  auto* pr = app.add_subcommand("predict", "Predict parameters for a subject-series dataset");
  pr->add_option("--data", a.data_dir, "subject series dataset")->required();
  pr->add_option("--method", a.method,
                 "hybrid | apw | ppg_windkessel | ppg_supervised | det_translator");
  pr->add_option("--cvae", a.cvae_ckpt, "cVAE checkpoint (hybrid)");
  pr->add_option("--npe", a.npe_ckpt, "NPE checkpoint (hybrid/apw/det)");
  pr->add_option("--det", a.det_ckpt, "det translator checkpoint");
  pr->add_option("--model", a.model_ckpt, "baseline posterior checkpoint");
  pr->add_option("--m", a.m, "APW generations per segment");
  pr->add_option("--k", a.k, "posterior draws per generation");
  pr->add_option("--seed", a.seed, "seed");
  pr->add_option("--out", a.out_path, "output CSV path");

  auto* rk = app.add_subcommand("rank-uncertainty",
                                "Rank segments by predicted uncertainty");
  rk->add_option("--data", a.data_dir, "subject series dataset")->required();
  rk->add_option("--cvae", a.cvae_ckpt, "cVAE checkpoint")->required();
  rk->add_option("--npe", a.npe_ckpt, "NPE checkpoint")->required();
  rk->add_option("--param", a.param, "hr | sv | co | svr");
  rk->add_option("--m", a.m, "APW generations per segment");
  rk->add_option("--k", a.k, "posterior draws per generation");
  rk->add_option("--seed", a.seed, "seed");
  rk->add_option("--out", a.out_path, "output CSV path");

  auto* ev = app.add_subcommand("evaluate", "Score prediction CSVs against labeled truth");
  ev->add_option("--truth", a.truth_dir, "labeled subject series dataset")->required();
  ev->add_option("--pred", a.pred_args, "method=path, repeatable")->required();
  ev->add_option("--window", a.window, "EMA window in segments");
  ev->add_option("--out", a.out_path, "report directory");

  auto* be = app.add_subcommand("bench", "Run the full desk-scale acceptance benchmark");
  be->add_option("--seed", a.seed, "master seed");
  be->add_option("--out", a.out_path, "output directory");
  be->add_option("--config", a.config_path, "experiment config JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    const json cfg = load_config_file(a.config_path);
    if (sim->parsed()) return cmd_simulate(a, cfg);
    if (tc->parsed()) return cmd_train_cvae(a, cfg);
    if (tn->parsed()) return cmd_train_npe(a, cfg);
    if (td->parsed()) return cmd_train_det(a, cfg);
    if (tb->parsed()) return cmd_train_baseline(a, cfg);
    if (pr->parsed()) return cmd_predict(a, cfg);
    if (rk->parsed()) return cmd_rank(a, cfg);
    if (ev->parsed()) return cmd_evaluate(a, cfg);
    if (be->parsed()) return cmd_bench(a, cfg);
    std::cerr << R"(error: {"code":2,"message":"unknown command"})" << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << json{{"code", kExitConfig}, {"message", e.what()}}.dump()
              << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << json{{"code", kExitRuntime}, {"message", e.what()}}.dump()
              << "\n";
    return kExitRuntime;
  }
}
