// Experiment orchestration: config files, seeded trials, worker pools, and
// deterministic CSV/SVG reports.
//
// One experiment = one generated corpus + n_trials independent trials. Every
// random decision in trial t flows from Rng(master_seed).child("trial-t")
// through fixed child labels (split, target, captions, bases, poison, inject,
// train, probe, zpairs, curve, bd), so adding trials or reordering workers
// never changes an earlier trial's row, and the tuple (config bytes, code)
// determines every output byte. Wall-clock times are segregated into
// timings.csv so the metric files stay reproducible.
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "cplab/attack.hpp"
#include "cplab/dataset.hpp"
#include "cplab/eval.hpp"
#include "cplab/model.hpp"
#include "cplab/types.hpp"
#include "json.hpp"

namespace cplab::harness {

// ---- configuration ----

enum class AttackKind { none, targeted, backdoor };

std::string to_string(AttackKind kind);
AttackKind attack_kind_from_string(const std::string& s);

struct AttackSpec {
  AttackKind kind = AttackKind::none;
  // Explicit count wins; -1 defers to ratio (count = round(ratio * |train|)).
  Index poison_count = -1;
  double poison_ratio = 0.0;  // must stay in [0, 0.05]
  attack::PatchSpec patch;    // backdoor trigger; also the eval-time probe
  attack::CaptionMode caption_mode = attack::CaptionMode::templates;
  bool caption_mode_auto = true;  // targeted -> templates, backdoor -> mined
  Index caption_count = 0;        // 0 -> same as poison count
  float evasion_sigma = 0.01f;
  bool evasion_caption_word = false;
  bool no_repeat_captions = false;
};

struct EvalSpec {
  Index n_pairs = 10000;  // pair budget for z-score and agreement curve
  int bins = 20;
  eval::ZDivisor z_divisor = eval::ZDivisor::variance;
  int probe_epochs = 60;
  Index probe_batch_size = 128;
  float probe_lr = 0.1f;
  float probe_momentum = 0.9f;
  float probe_weight_decay = 0.0f;
};

struct ExperimentConfig {
  data::CorpusSpec corpus;
  AttackSpec attack;
  model::TrainConfig train;
  EvalSpec eval;
  int n_trials = 8;
  int workers = 1;
  double train_fraction = 0.8;
  double probe_fraction = 0.1;  // remainder is the held-out test split
  uint64_t master_seed = 0;
  std::string output_dir = "out";
};

// Strict on both sides: unknown or missing keys are format errors, and
// to_json(from_json(x)) == x so configs echo into outputs verbatim.
nlohmann::json experiment_config_to_json(const ExperimentConfig& config);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
void validate(const ExperimentConfig& config);

// Applies one "dotted.path=value" override onto a config JSON tree. The path
// must already exist; the value parses as JSON when possible, else a string.
void apply_override(nlohmann::json& j, const std::string& assignment);

// ---- attack staging ----

struct StagedAttack {
  data::Corpus poisoned;   // pool with poison pairs riffled in
  Index poison_count = 0;  // resolved count (ratio applied)
  int target_class = -1;   // -1 for kind none
  Index target_pool_row = -1;  // targeted: the target's row in `targets`
};

// Samples the target, builds the poison set, and injects it into a copy of
// `pool`. The target image comes from `targets` (the held-out split inside
// run_trial; the pool itself for the staged CLI). All randomness flows
// through fixed children of `rng` (target, captions, bases, poison, inject).
StagedAttack stage_attack(const data::Corpus& pool,
                          const data::Corpus& targets,
                          const ExperimentConfig& config, const nd::Rng& rng);

// ---- trial results ----

struct TrialResult {
  int trial = 0;
  uint64_t train_seed = 0;
  AttackKind kind = AttackKind::none;
  Index poison_count = 0;
  int patch_size = 0;
  attack::Placement placement = attack::Placement::consistent;
  int target_class = -1;  // -1 when the attack has no target
  double zs_clean_acc = 0.0;
  double probe_clean_acc = 0.0;
  int zs_target_hit = -1;  // 1/0, -1 when not applicable
  int probe_target_hit = -1;
  bool have_z = false;
  eval::ZScoreReport z;
  std::vector<eval::AgreementBin> curve;
  bool have_bd = false;
  eval::BackdoorSuccess bd;
  double wall_seconds = 0.0;
  bool failed = false;
  std::string error;
  std::shared_ptr<const model::Checkpoint> checkpoint;  // artifact, not CSV
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<TrialResult> trials;
};

// One seeded trial end to end: split, target sampling, poison construction,
// injection, training, evaluation. Never throws — failures come back as a
// row with failed=true and the cause, so an experiment always completes.
TrialResult run_trial(const data::Corpus& corpus,
                      const ExperimentConfig& config, int trial_index);

// Generates the corpus, runs all trials across `workers` threads (results
// ordered by trial index), and writes config.json, results.csv, timings.csv,
// per-trial artifacts, summary.csv, SVG plots, and manifest.json under
// config.output_dir.
ExperimentResult run_experiment(const ExperimentConfig& config);
// Same, but on a caller-provided corpus (sweeps reuse one base corpus) and an
// explicit directory.
ExperimentResult run_experiment_on(const data::Corpus& corpus,
                                   const ExperimentConfig& config,
                                   const std::filesystem::path& dir);

// ---- sweeps ----

enum class SweepAxis { poison_count, patch_size, dataset_size, model_width, placement };

std::string to_string(SweepAxis axis);
SweepAxis sweep_axis_from_string(const std::string& s);

struct SweepSpec {
  ExperimentConfig base;
  SweepAxis axis = SweepAxis::poison_count;
  std::vector<std::string> values;  // parsed per axis; nonempty
};

struct SweepPoint {
  std::string value;
  ExperimentResult result;
};

struct SweepResult {
  SweepSpec spec;
  std::vector<SweepPoint> points;
};

// Returns base with the axis value applied (validated).
ExperimentConfig apply_axis(const ExperimentConfig& base, SweepAxis axis,
                            const std::string& value);

// One experiment per axis value under <output_dir>/point-<i>-<value>, plus
// sweep_raw.csv and sweep_summary.csv (mean and standard deviation per
// point) and sweep.svg at the top level. Per-point failures are carried in
// the rows, never aborting the sweep.
SweepResult run_sweep(const SweepSpec& spec);

// ---- reporting ----

// RFC-4180 style: quotes a field iff it holds a comma, quote, or newline.
std::string csv_field(const std::string& value);
// Splits one CSV record; inverse of csv_field over a joined row.
std::vector<std::string> csv_split_line(const std::string& line);

// Deterministic renderers (fixed column order, %.9g numerics, trailing \n).
std::string results_csv(const ExperimentResult& result);
std::string timings_csv(const ExperimentResult& result);
std::string curve_csv(const std::vector<eval::AgreementBin>& curve);
std::string zscore_csv(const eval::ZScoreReport& report);

// Re-renders reports from the files under `dir` (results.csv + per-trial
// CSVs), so run-time and re-run `report` output are byte-identical:
//   csv -> summary.csv; svg -> agreement.svg + zhist.svg.
// Any other format is an argument error.
void write_report(const std::filesystem::path& dir, const std::string& format);

}  // namespace cplab::harness
