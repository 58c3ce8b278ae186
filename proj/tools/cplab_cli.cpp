// Command line entry point: staged pipeline commands (gen-data, attack,
// train, eval) plus the orchestrated `run`, `sweep`, and `report`.
//
// Exit codes: 0 success, 1 runtime failure (message on stderr), 2 CLI misuse.
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cplab/error.hpp"
#include "cplab/eval.hpp"
#include "cplab/harness.hpp"
#include "cplab/serialize.hpp"
#include "json.hpp"

namespace {

using cplab::Index;
using cplab::harness::ExperimentConfig;
using nlohmann::json;

ExperimentConfig load_config(const std::string& path,
                             const std::vector<std::string>& overrides) {
  const std::string text = cplab::io::read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    cplab::fail(cplab::ErrorKind::format,
                "config file " + path + " is not valid JSON: " + e.what());
  }
  for (const std::string& assignment : overrides)
    cplab::harness::apply_override(j, assignment);
  return cplab::harness::experiment_config_from_json(j);
}

void cmd_gen_data(const ExperimentConfig& cfg, const std::string& out) {
  const cplab::data::Corpus corpus = cplab::data::generate_corpus(cfg.corpus);
  cplab::data::save_corpus(corpus, out);
  std::printf("wrote corpus: %lld examples, %zu classes -> %s\n",
              (long long)corpus.size(), corpus.class_names.size(),
              out.c_str());
}

void cmd_attack(const ExperimentConfig& cfg, const std::string& corpus_dir,
                const std::string& out) {
  const cplab::data::Corpus corpus = cplab::data::load_corpus(corpus_dir);
  const cplab::nd::Rng rng =
      cplab::nd::Rng(cfg.master_seed).child("attack");
  const cplab::harness::StagedAttack staged =
      cplab::harness::stage_attack(corpus, corpus, cfg, rng);
  cplab::data::save_corpus(staged.poisoned, out);
  json info{{"kind", cplab::harness::to_string(cfg.attack.kind)},
            {"poison_count", staged.poison_count},
            {"target_class", staged.target_class},
            {"target_row", staged.target_pool_row}};
  cplab::io::write_file(std::filesystem::path(out) / "attack.json",
                        info.dump(2) + "\n");
  std::printf("injected %lld poisons (target class %d) -> %s\n",
              (long long)staged.poison_count, staged.target_class,
              out.c_str());
}

void cmd_train(const ExperimentConfig& cfg, const std::string& corpus_dir,
               const std::string& out) {
  const cplab::data::Corpus corpus = cplab::data::load_corpus(corpus_dir);
  const cplab::model::Checkpoint ckpt = cplab::model::train(corpus, cfg.train);
  cplab::model::save_checkpoint(ckpt, out);
  const double last =
      ckpt.loss_trace.empty() ? 0.0 : double(ckpt.loss_trace.back());
  std::printf("trained %d epochs (final batch loss %.4f) -> %s\n",
              cfg.train.epochs, last, out.c_str());
}

void cmd_eval(const ExperimentConfig& cfg, const std::string& corpus_dir,
              const std::string& ckpt_dir, const std::string& out) {
  const cplab::data::Corpus corpus = cplab::data::load_corpus(corpus_dir);
  const cplab::model::Checkpoint ckpt =
      cplab::model::load_checkpoint(ckpt_dir);
  const cplab::nd::Rng rng = cplab::nd::Rng(cfg.master_seed).child("eval");

  const cplab::eval::ZeroShotHead head = cplab::eval::build_zero_shot_head(
      ckpt.params, corpus.vocab, corpus.max_seq_len, corpus.class_names,
      cplab::data::zero_shot_templates());
  const std::vector<int> pred =
      cplab::eval::zero_shot_classify(head, ckpt.params, corpus.images);
  const double acc = cplab::eval::accuracy(pred, corpus.labels);

  cplab::attack::PatchSpec patch = cfg.attack.patch;
  patch.placement = cplab::attack::Placement::consistent;
  cplab::nd::Rng z_rng = rng.child("zpairs");
  const cplab::eval::ZScoreReport z = cplab::eval::backdoor_z_score(
      ckpt.params, corpus.images, patch, cfg.eval.n_pairs, z_rng,
      cfg.eval.z_divisor);
  cplab::nd::Rng curve_rng = rng.child("curve");
  const auto curve = cplab::eval::similarity_agreement_curve(
      ckpt.params, corpus.images, corpus.labels, cfg.eval.n_pairs,
      cfg.eval.bins, curve_rng);

  std::filesystem::create_directories(out);
  json report{{"zero_shot_accuracy", acc},
              {"z", z.z},
              {"z_divisor", cfg.eval.z_divisor == cplab::eval::ZDivisor::variance
                                ? "variance"
                                : "stddev"},
              {"mean_clean", z.mean_clean},
              {"mean_backdoored", z.mean_backdoored},
              {"var_clean", z.var_clean},
              {"z_pairs", z.n_pairs},
              {"patch_size", patch.size}};
  cplab::io::write_file(std::filesystem::path(out) / "eval.json",
                        report.dump(2) + "\n");
  cplab::io::write_file(std::filesystem::path(out) / "curve.csv",
                        cplab::harness::curve_csv(curve));
  cplab::io::write_file(std::filesystem::path(out) / "zscore.csv",
                        cplab::harness::zscore_csv(z));
  std::printf("zero-shot accuracy %.4f, z-score %.3f -> %s\n", acc, z.z,
              out.c_str());
}

void print_trials(const cplab::harness::ExperimentResult& result) {
  for (const auto& row : result.trials) {
    if (row.failed) {
      std::printf("trial %d: FAILED (%s)\n", row.trial, row.error.c_str());
      continue;
    }
    std::string extra;
    if (row.zs_target_hit >= 0)
      extra += std::string(", target ") + (row.zs_target_hit ? "hit" : "miss");
    if (row.have_bd) {
      char buf[64];
      std::snprintf(buf, sizeof buf, ", patched rate %.2f",
                    row.bd.patched_rate);
      extra += buf;
    }
    std::printf("trial %d: zs %.3f, probe %.3f, z %.2f%s\n", row.trial,
                row.zs_clean_acc, row.probe_clean_acc,
                row.have_z ? row.z.z : 0.0, extra.c_str());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"contrastive poisoning lab"};
  app.require_subcommand(1);

  std::string config_path, corpus_dir, ckpt_dir, out_dir, results_dir;
  std::string format = "csv", axis;
  std::vector<std::string> overrides, values;
  int trials = -1, workers = -1;

  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "experiment config JSON")
        ->required();
    cmd->add_option("--set", overrides,
                    "override a config key by dotted path (a.b.c=value)");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate a corpus");
  add_config(gen);
  gen->add_option("--out", out_dir, "corpus output directory")->required();

  CLI::App* atk = app.add_subcommand("attack", "inject poisons into a corpus");
  add_config(atk);
  atk->add_option("--corpus", corpus_dir, "input corpus directory")->required();
  atk->add_option("--out", out_dir, "poisoned corpus output directory")
      ->required();

  CLI::App* trn = app.add_subcommand("train", "train the dual encoder");
  add_config(trn);
  trn->add_option("--corpus", corpus_dir, "training corpus directory")
      ->required();
  trn->add_option("--out", out_dir, "checkpoint output directory")->required();

  CLI::App* evl = app.add_subcommand("eval", "evaluate a checkpoint");
  add_config(evl);
  evl->add_option("--corpus", corpus_dir, "evaluation corpus directory")
      ->required();
  evl->add_option("--checkpoint", ckpt_dir, "checkpoint directory")
      ->required();
  evl->add_option("--out", out_dir, "evaluation output directory")->required();

  CLI::App* run = app.add_subcommand("run", "run a full experiment");
  add_config(run);
  run->add_option("--out", out_dir, "override the config's output_dir");
  run->add_option("--trials", trials, "override n_trials");
  run->add_option("--workers", workers, "override worker count");

  CLI::App* swp = app.add_subcommand("sweep", "sweep one config axis");
  add_config(swp);
  swp->add_option("--axis", axis,
                  "poison_count | patch_size | dataset_size | model_width | "
                  "placement")
      ->required();
  swp->add_option("--values", values, "comma-separated axis values")
      ->required()
      ->delimiter(',');
  swp->add_option("--out", out_dir, "override the config's output_dir");

  CLI::App* rep = app.add_subcommand("report", "re-render reports");
  rep->add_option("--results", results_dir, "experiment output directory")
      ->required();
  rep->add_option("--format", format, "csv or svg");

  gen->callback([&] { cmd_gen_data(load_config(config_path, overrides), out_dir); });
  atk->callback([&] {
    cmd_attack(load_config(config_path, overrides), corpus_dir, out_dir);
  });
  trn->callback([&] {
    cmd_train(load_config(config_path, overrides), corpus_dir, out_dir);
  });
  evl->callback([&] {
    cmd_eval(load_config(config_path, overrides), corpus_dir, ckpt_dir,
             out_dir);
  });
  run->callback([&] {
    ExperimentConfig cfg = load_config(config_path, overrides);
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    if (trials > 0) cfg.n_trials = trials;
    if (workers > 0) cfg.workers = workers;
    const auto result = cplab::harness::run_experiment(cfg);
    print_trials(result);
    std::printf("report written to %s\n", cfg.output_dir.c_str());
  });
  swp->callback([&] {
    cplab::harness::SweepSpec spec;
    spec.base = load_config(config_path, overrides);
    if (!out_dir.empty()) spec.base.output_dir = out_dir;
    spec.axis = cplab::harness::sweep_axis_from_string(axis);
    spec.values = values;
    const auto result = cplab::harness::run_sweep(spec);
    for (const auto& point : result.points) {
      std::printf("-- %s = %s\n", axis.c_str(), point.value.c_str());
      print_trials(point.result);
    }
    std::printf("sweep written to %s\n", spec.base.output_dir.c_str());
  });
  rep->callback([&] {
    cplab::harness::write_report(results_dir, format);
    std::printf("%s report written to %s\n", format.c_str(),
                results_dir.c_str());
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const cplab::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.kind() == cplab::ErrorKind::usage ? 2 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
