// Command-line entry point wiring the full pipeline: dataset fabrication,
// feature extraction, tagger training and pseudo-labeling, two-stage
// training, evaluation, and domain-gap analysis. One command per process;
// every run directory receives a frozen copy of its resolved config.

#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "scmt/analysis.hpp"
#include "scmt/config.hpp"
#include "scmt/datagen.hpp"
#include "scmt/dataset.hpp"
#include "scmt/events.hpp"
#include "scmt/melspec.hpp"
#include "scmt/model.hpp"
#include "scmt/nn.hpp"
#include "scmt/trainer.hpp"

namespace {

using Scalar = float;

scmt::FpCrnn<Scalar> model_from_checkpoint(const scmt::Checkpoint<Scalar>& ck) {
  scmt::FpCrnnConfig cfg = scmt::FpCrnnConfig::from_text(ck.config_text);
  scmt::FpCrnn<Scalar> model(cfg);
  scmt::restore_into(model.store(), ck);
  return model;
}

int cmd_make_dataset(const std::string& out, uint64_t seed, int n_strong, int n_weak,
                     int n_unlabeled, int n_validation) {
  scmt::DatasetConfig cfg;
  cfg.out_dir = out;
  cfg.n_strong = n_strong;
  cfg.n_weak = n_weak;
  cfg.n_unlabeled = n_unlabeled;
  cfg.n_validation = n_validation;
  scmt::DatasetPaths paths = scmt::build_dataset(cfg, seed);

  scmt::KvConfig frozen = scmt::KvConfig::parse(cfg.to_text());
  frozen.set("data.seed", static_cast<int64_t>(seed));
  frozen.save((std::filesystem::path(out) / "config.txt").string());

  std::cout << "dataset written to " << paths.root << " (" << n_strong << " strong, "
            << n_weak << " weak, " << n_unlabeled << " unlabeled, " << n_validation
            << " validation)\n";
  return 0;
}

int cmd_extract_features(const std::string& data_dir) {
  scmt::SedDataset ds = scmt::SedDataset::load(data_dir);
  std::string stats = scmt::extract_features(ds);
  std::cout << "features cached under " << data_dir << "/features (stats: " << stats
            << ")\n";
  return 0;
}

int cmd_train_tagger(scmt::TrainingConfig cfg) {
  scmt::SedDataset ds = scmt::SedDataset::load(cfg.data_dir);
  scmt::FeatureStore store = scmt::FeatureStore::open(cfg.data_dir);
  std::string ckpt = scmt::train_tagger<Scalar>(cfg, ds, store);
  std::cout << "tagger checkpoint: " << ckpt << "\n";
  return 0;
}

int cmd_pseudo_label(const std::string& data_dir, const std::string& tagger_ckpt,
                     const std::string& out_path, double threshold) {
  scmt::SedDataset ds = scmt::SedDataset::load(data_dir);
  scmt::FeatureStore store = scmt::FeatureStore::open(data_dir);
  scmt::Checkpoint<Scalar> ck = scmt::load_checkpoint<Scalar>(tagger_ckpt);
  scmt::FpCrnn<Scalar> tagger = model_from_checkpoint(ck);
  std::vector<scmt::ClipRecord> labeled =
      scmt::pseudo_label(tagger, store, ds.unlabeled, threshold);
  scmt::write_pseudo_manifest(out_path, labeled, ds.class_names);
  std::cout << "pseudo-labeled " << labeled.size() << " of " << ds.unlabeled.size()
            << " unlabeled clips -> " << out_path << "\n";
  return 0;
}

int cmd_train(scmt::TrainingConfig cfg, const std::string& from_dir) {
  cfg.validate();
  scmt::SedDataset ds = scmt::SedDataset::load(cfg.data_dir);
  scmt::FeatureStore store = scmt::FeatureStore::open(cfg.data_dir);
  scmt::Trainer<Scalar> trainer(cfg, ds, store);
  if (cfg.stage == 2) {
    SCMT_CONFIG_REQUIRE(!from_dir.empty(),
                        "train --stage 2 requires --from <stage-1 run dir>");
    namespace fs = std::filesystem;
    trainer.resume_from((fs::path(from_dir) / "student.ckpt").string(),
                        (fs::path(from_dir) / "teacher.ckpt").string());
  }
  scmt::StageResult result = trainer.run();
  std::cout << "stage " << cfg.stage << " (" << scmt::strategy_name(cfg.strategy)
            << (cfg.ada ? ", ada" : "") << ") finished at step " << result.end_step
            << "; val F1 " << result.final_f1 << "\n"
            << "student: " << result.student_ckpt << "\n"
            << "teacher: " << result.teacher_ckpt << "\n"
            << "metrics: " << result.metrics_path << "\n";
  return 0;
}

int cmd_evaluate(const std::string& data_dir, const std::string& ckpt_path,
                 double threshold, int median_window, const std::string& out_path) {
  scmt::SedDataset ds = scmt::SedDataset::load(data_dir);
  scmt::FeatureStore store = scmt::FeatureStore::open(data_dir);
  scmt::Checkpoint<Scalar> ck = scmt::load_checkpoint<Scalar>(ckpt_path);
  scmt::FpCrnn<Scalar> model = model_from_checkpoint(ck);

  scmt::TrainingConfig cfg;
  cfg.decode_threshold = threshold;
  cfg.median_window = median_window;
  double f1 = scmt::validate_f1(model, store, ds.validation, ds.n_classes(), cfg);

  std::ostringstream report;
  report.precision(6);
  report << "checkpoint=" << ckpt_path << "\n"
         << "clips=" << ds.validation.size() << "\n"
         << "macro_f1=" << f1 << "\n";
  std::cout << report.str();
  if (!out_path.empty()) {
    std::ofstream f(out_path, std::ios::binary);
    if (!f) throw scmt::IoError("evaluate: cannot write " + out_path);
    f << report.str();
  }
  return 0;
}

int cmd_analyze(const std::string& data_dir, const std::string& ckpt_path,
                const std::string& out_dir, const std::string& strategy, bool ada,
                uint64_t seed, double perplexity) {
  namespace fs = std::filesystem;
  scmt::SedDataset ds = scmt::SedDataset::load(data_dir);
  scmt::FeatureStore store = scmt::FeatureStore::open(data_dir);
  scmt::Checkpoint<Scalar> ck = scmt::load_checkpoint<Scalar>(ckpt_path);
  scmt::FpCrnn<Scalar> model = model_from_checkpoint(ck);

  // Both domains, embedded with the same model: clean strong clips carry
  // the synthetic tag, validation clips the real tag.
  std::vector<scmt::ClipRecord> clips = ds.strong;
  clips.insert(clips.end(), ds.validation.begin(), ds.validation.end());
  std::vector<scmt::EmbeddingRecord> records =
      scmt::extract_embeddings(model, store, clips);

  scmt::TsneOptions tsne;
  tsne.seed = seed;
  if (perplexity > 0.0) tsne.perplexity = perplexity;
  double max_feasible = static_cast<double>(records.size()) / 3.0;
  if (tsne.perplexity >= max_feasible) tsne.perplexity = max_feasible * 0.9;

  scmt::GapReport report = scmt::domain_gap_report(std::move(records), tsne);

  scmt::TrainingConfig eval_cfg;
  double f1 = scmt::validate_f1(model, store, ds.validation, ds.n_classes(), eval_cfg);

  fs::create_directories(out_dir);
  std::string report_path = (fs::path(out_dir) / "gap_report.txt").string();
  std::string coords_path = (fs::path(out_dir) / "coords.tsv").string();
  scmt::write_gap_report(report_path, strategy, ada, f1, report, seed);
  scmt::write_coords(coords_path, report);

  std::cout << "strategy " << strategy << (ada ? " (ada)" : "") << ": F1 " << f1
            << ", projection silhouette " << report.silhouette_projection
            << ", raw silhouette " << report.silhouette_raw << "\n"
            << "report: " << report_path << "\n"
            << "coords: " << coords_path << "\n";
  return 0;
}

int cmd_compare(const std::vector<std::string>& report_paths) {
  std::vector<scmt::CompareRow> rows;
  for (const std::string& p : report_paths) rows.push_back(scmt::read_gap_report(p));
  std::cout << scmt::format_compare_table(rows);
  return 0;
}

}  // namespace

namespace {

// The config file is the base layer and flags override it, so the file has
// to be loaded before CLI11 writes any flag values. Find --config in argv
// ahead of the real parse.
std::string pre_scan_config(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) return argv[i + 1];
    if (a.rfind("--config=", 0) == 0) return a.substr(9);
  }
  return "";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised sound event detection with shift consistency "
               "and adversarial domain adaptation"};
  app.require_subcommand(1);

  scmt::TrainingConfig base_cfg;
  const std::string config_path = pre_scan_config(argc, argv);
  if (!config_path.empty()) {
    try {
      base_cfg = scmt::TrainingConfig::from_kv(scmt::KvConfig::load(config_path));
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 1;
    }
  }

  // make-dataset
  std::string md_out;
  uint64_t md_seed = 1;
  int md_strong = 200, md_weak = 200, md_unlabeled = 400, md_validation = 100;
  auto* md = app.add_subcommand("make-dataset", "Generate the synthetic soundscape corpus");
  md->add_option("--out", md_out, "Output directory")->required();
  md->add_option("--seed", md_seed, "Master seed");
  md->add_option("--strong", md_strong, "Clean strongly labeled clips");
  md->add_option("--weak", md_weak, "Domainified weakly labeled clips");
  md->add_option("--unlabeled", md_unlabeled, "Domainified unlabeled clips");
  md->add_option("--validation", md_validation, "Domainified validation clips");

  // extract-features
  std::string ef_data;
  auto* ef = app.add_subcommand("extract-features", "Cache log-mel features for a dataset");
  ef->add_option("--data", ef_data, "Dataset directory")->required();

  // shared training options
  auto add_train_options = [](CLI::App* cmd, scmt::TrainingConfig& cfg,
                              std::string& config_path) {
    cmd->add_option("--config", config_path, "Key=value config file (flags override)");
    cmd->add_option("--data", cfg.data_dir, "Dataset directory");
    cmd->add_option("--run", cfg.run_dir, "Run directory for logs and checkpoints");
    cmd->add_option("--seed", cfg.seed, "Master seed");
    cmd->add_option("--preset", cfg.preset, "Model preset (default|tiny)");
    cmd->add_option("--steps", cfg.max_steps, "Steps to run");
    cmd->add_option("--ramp-steps", cfg.ramp_steps, "Consistency ramp length");
    cmd->add_option("--lr", cfg.lr, "Learning rate");
    cmd->add_option("--ema-alpha", cfg.ema_alpha, "Teacher EMA decay");
    cmd->add_option("--noise-sigma", cfg.noise_sigma, "Teacher input noise std");
    cmd->add_option("--batch-strong", cfg.batch.n_strong, "Strong clips per batch");
    cmd->add_option("--batch-weak", cfg.batch.n_weak, "Weak clips per batch");
    cmd->add_option("--batch-unlabeled", cfg.batch.n_unlabeled, "Unlabeled clips per batch");
    cmd->add_option("--lambda-d", cfg.lambda_d, "Adversarial weight");
    cmd->add_option("--log-interval", cfg.log_interval, "Steps between log rows");
    cmd->add_option("--val-interval", cfg.val_interval, "Steps between validations (0 = end)");
    cmd->add_option("--pseudo", cfg.pseudo_manifest, "Pseudo-label manifest to add to the weak pool");
  };

  // train
  scmt::TrainingConfig tr_cfg = base_cfg;
  std::string tr_config_path, tr_from;
  std::string tr_strategy = scmt::strategy_name(tr_cfg.strategy);
  std::string tr_ada = tr_cfg.ada ? "on" : "off";
  auto* tr = app.add_subcommand("train", "Run stage-1 or stage-2 training");
  add_train_options(tr, tr_cfg, tr_config_path);
  tr->add_option("--stage", tr_cfg.stage, "Training stage (1 or 2)");
  tr->add_option("--strategy", tr_strategy, "none|ict|sct|scmt");
  tr->add_option("--ada", tr_ada, "Adversarial domain term: on|off (stage 2)");
  tr->add_option("--from", tr_from, "Stage-1 run directory to resume from (stage 2)");

  // train-tagger
  scmt::TrainingConfig tg_cfg = base_cfg;
  if (config_path.empty()) tg_cfg.max_steps = 400;
  std::string tg_config_path;
  auto* tg = app.add_subcommand("train-tagger", "Train the clip tagger for pseudo-labeling");
  add_train_options(tg, tg_cfg, tg_config_path);

  // pseudo-label
  std::string pl_data, pl_tagger, pl_out;
  double pl_threshold = 0.5;
  auto* pl = app.add_subcommand("pseudo-label", "Tag unlabeled clips with a trained tagger");
  pl->add_option("--data", pl_data, "Dataset directory")->required();
  pl->add_option("--tagger", pl_tagger, "Tagger checkpoint")->required();
  pl->add_option("--out", pl_out, "Output manifest path")->required();
  pl->add_option("--threshold", pl_threshold, "Clip probability threshold");

  // evaluate
  std::string ev_data, ev_ckpt, ev_out;
  double ev_threshold = 0.5;
  int ev_median = 7;
  auto* ev = app.add_subcommand("evaluate", "Event-based F1 of a checkpoint on validation");
  ev->add_option("--data", ev_data, "Dataset directory")->required();
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint path")->required();
  ev->add_option("--threshold", ev_threshold, "Decode threshold");
  ev->add_option("--median-window", ev_median, "Median filter window (odd)");
  ev->add_option("--out", ev_out, "Optional report file");

  // analyze
  std::string an_data, an_ckpt, an_out, an_strategy = "scmt", an_ada = "off";
  uint64_t an_seed = 1;
  double an_perplexity = 0.0;
  auto* an = app.add_subcommand("analyze", "Domain-gap report for a checkpoint");
  an->add_option("--data", an_data, "Dataset directory")->required();
  an->add_option("--ckpt", an_ckpt, "Checkpoint path")->required();
  an->add_option("--out", an_out, "Output directory")->required();
  an->add_option("--strategy", an_strategy, "Strategy label for the report");
  an->add_option("--ada", an_ada, "ADA flag for the report: on|off");
  an->add_option("--seed", an_seed, "Projection seed");
  an->add_option("--perplexity", an_perplexity, "Projection perplexity (0 = default)");

  // compare
  std::vector<std::string> cp_reports;
  auto* cp = app.add_subcommand("compare", "Tabulate F1 and silhouettes across runs");
  cp->add_option("--reports", cp_reports, "Gap report files")->required()->expected(-1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n" << app.help() << "\n";
    return 2;
  }

  auto parse_on_off = [](const std::string& v, const char* flag) {
    if (v == "on") return true;
    if (v == "off") return false;
    throw scmt::ConfigError(std::string(flag) + " must be 'on' or 'off', got '" + v + "'");
  };

  try {
    if (md->parsed())
      return cmd_make_dataset(md_out, md_seed, md_strong, md_weak, md_unlabeled,
                              md_validation);
    if (ef->parsed()) return cmd_extract_features(ef_data);
    if (tg->parsed()) {
      SCMT_CONFIG_REQUIRE(!tg_cfg.data_dir.empty() && !tg_cfg.run_dir.empty(),
                          "train-tagger requires --data and --run");
      return cmd_train_tagger(tg_cfg);
    }
    if (pl->parsed()) return cmd_pseudo_label(pl_data, pl_tagger, pl_out, pl_threshold);
    if (tr->parsed()) {
      tr_cfg.strategy = scmt::parse_strategy(tr_strategy);
      tr_cfg.ada = parse_on_off(tr_ada, "--ada");
      if (tr_cfg.stage == 2 && tr->count("--ada") == 0 && config_path.empty())
        tr_cfg.ada = true;
      SCMT_CONFIG_REQUIRE(!tr_cfg.data_dir.empty() && !tr_cfg.run_dir.empty(),
                          "train requires --data and --run");
      return cmd_train(tr_cfg, tr_from);
    }
    if (ev->parsed()) return cmd_evaluate(ev_data, ev_ckpt, ev_threshold, ev_median, ev_out);
    if (an->parsed())
      return cmd_analyze(an_data, an_ckpt, an_out, an_strategy,
                         parse_on_off(an_ada, "--ada"), an_seed, an_perplexity);
    if (cp->parsed()) return cmd_compare(cp_reports);
    std::cerr << "no command selected\n" << app.help() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
