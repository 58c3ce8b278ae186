#include "cplab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <thread>

#include "cplab/error.hpp"
#include "cplab/linalg.hpp"
#include "jsonio.hpp"

namespace cplab::harness {

using nlohmann::json;
using nd::Rng;

// ---- enum <-> string ----

std::string to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::none: return "none";
    case AttackKind::targeted: return "targeted";
    case AttackKind::backdoor: return "backdoor";
  }
  fail(ErrorKind::argument, "bad attack kind");
}

AttackKind attack_kind_from_string(const std::string& s) {
  if (s == "none") return AttackKind::none;
  if (s == "targeted") return AttackKind::targeted;
  if (s == "backdoor") return AttackKind::backdoor;
  fail(ErrorKind::format, "config: unknown attack kind '" + s + "'");
}

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::poison_count: return "poison_count";
    case SweepAxis::patch_size: return "patch_size";
    case SweepAxis::dataset_size: return "dataset_size";
    case SweepAxis::model_width: return "model_width";
    case SweepAxis::placement: return "placement";
  }
  fail(ErrorKind::argument, "bad sweep axis");
}

SweepAxis sweep_axis_from_string(const std::string& s) {
  if (s == "poison_count") return SweepAxis::poison_count;
  if (s == "patch_size") return SweepAxis::patch_size;
  if (s == "dataset_size") return SweepAxis::dataset_size;
  if (s == "model_width") return SweepAxis::model_width;
  if (s == "placement") return SweepAxis::placement;
  fail(ErrorKind::format, "config: unknown sweep axis '" + s + "'");
}

namespace {

std::string placement_name(attack::Placement p) {
  return p == attack::Placement::consistent ? "consistent" : "random";
}

attack::Placement placement_from_string(const std::string& s) {
  if (s == "consistent") return attack::Placement::consistent;
  if (s == "random") return attack::Placement::random;
  fail(ErrorKind::format, "config: unknown placement '" + s + "'");
}

std::string divisor_name(eval::ZDivisor d) {
  return d == eval::ZDivisor::variance ? "variance" : "stddev";
}

eval::ZDivisor divisor_from_string(const std::string& s) {
  if (s == "variance") return eval::ZDivisor::variance;
  if (s == "stddev") return eval::ZDivisor::stddev;
  fail(ErrorKind::format, "config: unknown z divisor '" + s + "'");
}

template <class T>
T field(const json& j, const std::string& scope, const std::string& key) {
  require(j.contains(key), ErrorKind::format,
          "config: missing key '" + scope + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::format,
         "config: key '" + scope + key + "' has the wrong type");
  }
}

void check_keys(const json& j, const std::string& scope,
                std::initializer_list<const char*> keys) {
  require(j.is_object(), ErrorKind::format,
          "config: section '" + scope + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::find_if(keys.begin(), keys.end(), [&](const char* k) {
          return key == k;
        }) == keys.end())
      fail(ErrorKind::format, "config: unknown key '" + scope + key + "'");
  }
}

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string fmt_svg(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

// ---- config serialization ----

json experiment_config_to_json(const ExperimentConfig& c) {
  json corpus{{"n_examples", c.corpus.n_examples},
              {"n_classes", c.corpus.n_classes},
              {"height", c.corpus.dims.height},
              {"width", c.corpus.dims.width},
              {"channels", c.corpus.dims.channels},
              {"max_seq_len", c.corpus.max_seq_len},
              {"noise_level", c.corpus.noise_level},
              {"min_scale", c.corpus.min_scale},
              {"max_scale", c.corpus.max_scale},
              {"seed", c.corpus.seed}};
  json attack{{"kind", to_string(c.attack.kind)},
              {"poison_count", c.attack.poison_count},
              {"poison_ratio", c.attack.poison_ratio},
              {"patch_size", c.attack.patch.size},
              {"placement", placement_name(c.attack.patch.placement)},
              {"patch_x0", c.attack.patch.x0},
              {"patch_y0", c.attack.patch.y0},
              {"caption_mode",
               c.attack.caption_mode_auto
                   ? "auto"
                   : (c.attack.caption_mode == attack::CaptionMode::mined
                          ? "mined"
                          : "templates")},
              {"caption_count", c.attack.caption_count},
              {"evasion_sigma", c.attack.evasion_sigma},
              {"evasion_caption_word", c.attack.evasion_caption_word},
              {"no_repeat_captions", c.attack.no_repeat_captions}};
  json eval{{"n_pairs", c.eval.n_pairs},
            {"bins", c.eval.bins},
            {"z_divisor", divisor_name(c.eval.z_divisor)},
            {"probe_epochs", c.eval.probe_epochs},
            {"probe_batch_size", c.eval.probe_batch_size},
            {"probe_lr", c.eval.probe_lr},
            {"probe_momentum", c.eval.probe_momentum},
            {"probe_weight_decay", c.eval.probe_weight_decay}};
  return json{{"corpus", corpus},
              {"attack", attack},
              {"train", model::train_config_to_json(c.train)},
              {"eval", eval},
              {"n_trials", c.n_trials},
              {"workers", c.workers},
              {"train_fraction", c.train_fraction},
              {"probe_fraction", c.probe_fraction},
              {"master_seed", c.master_seed},
              {"output_dir", c.output_dir}};
}

ExperimentConfig experiment_config_from_json(const json& j) {
  check_keys(j, "",
             {"corpus", "attack", "train", "eval", "n_trials", "workers",
              "train_fraction", "probe_fraction", "master_seed", "output_dir"});
  ExperimentConfig c;

  const json jc = field<json>(j, "", "corpus");
  check_keys(jc, "corpus.",
             {"n_examples", "n_classes", "height", "width", "channels",
              "max_seq_len", "noise_level", "min_scale", "max_scale", "seed"});
  c.corpus.n_examples = field<Index>(jc, "corpus.", "n_examples");
  c.corpus.n_classes = field<int>(jc, "corpus.", "n_classes");
  c.corpus.dims.height = field<int>(jc, "corpus.", "height");
  c.corpus.dims.width = field<int>(jc, "corpus.", "width");
  c.corpus.dims.channels = field<int>(jc, "corpus.", "channels");
  c.corpus.max_seq_len = field<int>(jc, "corpus.", "max_seq_len");
  c.corpus.noise_level = field<float>(jc, "corpus.", "noise_level");
  c.corpus.min_scale = field<float>(jc, "corpus.", "min_scale");
  c.corpus.max_scale = field<float>(jc, "corpus.", "max_scale");
  c.corpus.seed = field<uint64_t>(jc, "corpus.", "seed");

  const json ja = field<json>(j, "", "attack");
  check_keys(ja, "attack.",
             {"kind", "poison_count", "poison_ratio", "patch_size",
              "placement", "patch_x0", "patch_y0", "caption_mode",
              "caption_count", "evasion_sigma", "evasion_caption_word",
              "no_repeat_captions"});
  c.attack.kind =
      attack_kind_from_string(field<std::string>(ja, "attack.", "kind"));
  c.attack.poison_count = field<Index>(ja, "attack.", "poison_count");
  c.attack.poison_ratio = field<double>(ja, "attack.", "poison_ratio");
  c.attack.patch.size = field<int>(ja, "attack.", "patch_size");
  c.attack.patch.placement =
      placement_from_string(field<std::string>(ja, "attack.", "placement"));
  c.attack.patch.x0 = field<int>(ja, "attack.", "patch_x0");
  c.attack.patch.y0 = field<int>(ja, "attack.", "patch_y0");
  const std::string mode = field<std::string>(ja, "attack.", "caption_mode");
  if (mode == "auto") {
    c.attack.caption_mode_auto = true;
  } else if (mode == "mined") {
    c.attack.caption_mode_auto = false;
    c.attack.caption_mode = attack::CaptionMode::mined;
  } else if (mode == "templates") {
    c.attack.caption_mode_auto = false;
    c.attack.caption_mode = attack::CaptionMode::templates;
  } else {
    fail(ErrorKind::format, "config: unknown caption mode '" + mode + "'");
  }
  c.attack.caption_count = field<Index>(ja, "attack.", "caption_count");
  c.attack.evasion_sigma = field<float>(ja, "attack.", "evasion_sigma");
  c.attack.evasion_caption_word =
      field<bool>(ja, "attack.", "evasion_caption_word");
  c.attack.no_repeat_captions =
      field<bool>(ja, "attack.", "no_repeat_captions");

  c.train = model::train_config_from_json(field<json>(j, "", "train"));

  const json je = field<json>(j, "", "eval");
  check_keys(je, "eval.",
             {"n_pairs", "bins", "z_divisor", "probe_epochs",
              "probe_batch_size", "probe_lr", "probe_momentum",
              "probe_weight_decay"});
  c.eval.n_pairs = field<Index>(je, "eval.", "n_pairs");
  c.eval.bins = field<int>(je, "eval.", "bins");
  c.eval.z_divisor =
      divisor_from_string(field<std::string>(je, "eval.", "z_divisor"));
  c.eval.probe_epochs = field<int>(je, "eval.", "probe_epochs");
  c.eval.probe_batch_size = field<Index>(je, "eval.", "probe_batch_size");
  c.eval.probe_lr = field<float>(je, "eval.", "probe_lr");
  c.eval.probe_momentum = field<float>(je, "eval.", "probe_momentum");
  c.eval.probe_weight_decay = field<float>(je, "eval.", "probe_weight_decay");

  c.n_trials = field<int>(j, "", "n_trials");
  c.workers = field<int>(j, "", "workers");
  c.train_fraction = field<double>(j, "", "train_fraction");
  c.probe_fraction = field<double>(j, "", "probe_fraction");
  c.master_seed = field<uint64_t>(j, "", "master_seed");
  c.output_dir = field<std::string>(j, "", "output_dir");
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  const std::string text = io::read_file(path);
  return experiment_config_from_json(
      io::parse_json(text, "config file " + path.string()));
}

void validate(const ExperimentConfig& c) {
  require(c.n_trials >= 1, ErrorKind::spec, "n_trials must be >= 1");
  require(c.workers >= 1, ErrorKind::spec, "workers must be >= 1");
  require(c.train_fraction > 0.0 && c.probe_fraction >= 0.0 &&
              c.train_fraction + c.probe_fraction < 1.0,
          ErrorKind::spec,
          "split fractions must leave a nonempty held-out test share");
  require(c.attack.poison_ratio >= 0.0 && c.attack.poison_ratio <= 0.05,
          ErrorKind::spec, "poison ratio must lie in [0, 0.05]");
  require(c.attack.poison_count >= -1, ErrorKind::spec,
          "poison count must be >= 0, or -1 to defer to the ratio");
  require(c.attack.caption_count >= 0, ErrorKind::spec,
          "caption count must be >= 0");
  require(c.attack.evasion_sigma >= 0.0f, ErrorKind::spec,
          "evasion sigma must be >= 0");
  require(c.eval.n_pairs >= 1, ErrorKind::spec, "eval n_pairs must be >= 1");
  require(c.eval.bins >= 1, ErrorKind::spec, "eval bins must be >= 1");
  require(c.eval.probe_epochs >= 0, ErrorKind::spec,
          "probe epochs must be >= 0");
}

void apply_override(json& j, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0, ErrorKind::usage,
          "override must look like dotted.path=value: '" + assignment + "'");
  const std::string path = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);

  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::exception&) {
    parsed = value;  // bare words are strings
  }

  json* cur = &j;
  size_t start = 0;
  for (;;) {
    const size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot - start);
    require(!key.empty(), ErrorKind::usage,
            "override path has an empty segment: '" + path + "'");
    require(cur->is_object() && cur->contains(key), ErrorKind::format,
            "config: unknown key '" + path + "'");
    if (dot == std::string::npos) {
      (*cur)[key] = parsed;
      return;
    }
    cur = &(*cur)[key];
    start = dot + 1;
  }
}

// ---- trial execution ----

StagedAttack stage_attack(const data::Corpus& pool,
                          const data::Corpus& targets,
                          const ExperimentConfig& cfg, const Rng& rng) {
  StagedAttack out;
  const AttackSpec& a = cfg.attack;
  if (a.kind == AttackKind::none) {
    out.poisoned = pool;
    return out;
  }

  out.poison_count =
      a.poison_count >= 0
          ? a.poison_count
          : Index(std::llround(a.poison_ratio * double(pool.size())));
  const int K = int(pool.class_names.size());

  Rng target_rng = rng.child("target");
  if (a.kind == AttackKind::targeted) {
    // Random image from `targets`, random label other than its true one.
    out.target_pool_row = Index(target_rng.below(uint64_t(targets.size())));
    const int true_label = int(targets.labels[size_t(out.target_pool_row)]);
    int k = int(target_rng.below(uint64_t(K - 1)));
    if (k >= true_label) ++k;
    out.target_class = k;
  } else {
    out.target_class = int(target_rng.below(uint64_t(K)));
  }
  if (out.poison_count == 0) {
    out.poisoned = pool;
    return out;
  }

  const attack::CaptionMode mode =
      a.caption_mode_auto ? (a.kind == AttackKind::targeted
                                 ? attack::CaptionMode::templates
                                 : attack::CaptionMode::mined)
                          : a.caption_mode;
  const Index n_captions =
      a.caption_count > 0 ? a.caption_count : out.poison_count;
  Rng caption_rng = rng.child("captions");
  const attack::CaptionSet captions = attack::build_caption_set(
      pool, pool.class_names[size_t(out.target_class)], mode, n_captions,
      caption_rng);

  Rng poison_rng = rng.child("poison");
  attack::PoisonSet poisons;
  if (a.kind == AttackKind::targeted) {
    attack::PoisonTarget target;
    target.image = targets.images.row(out.target_pool_row).transpose();
    target.target_class = out.target_class;
    target.class_name = pool.class_names[size_t(out.target_class)];
    attack::EvasionSpec evasion;
    evasion.sigma = a.evasion_sigma;
    evasion.append_word = a.evasion_caption_word;
    if (evasion.append_word)
      for (const auto& color : data::kColors)
        evasion.word_pool.push_back(color.name);
    poisons = attack::make_targeted_poisons(target, pool.dims, captions,
                                            out.poison_count, evasion,
                                            a.no_repeat_captions, poison_rng);
  } else {
    Rng base_rng = rng.child("bases");
    const std::vector<Index> rows =
        base_rng.sample_without_replacement(pool.size(), out.poison_count);
    MatF bases(out.poison_count, pool.images.cols());
    for (Index i = 0; i < out.poison_count; ++i)
      bases.row(i) = pool.images.row(rows[size_t(i)]);
    poisons =
        attack::make_backdoor_poisons(bases, pool.dims, a.patch, captions,
                                      out.target_class, out.poison_count,
                                      poison_rng);
  }
  Rng inject_rng = rng.child("inject");
  out.poisoned = attack::inject(pool, poisons, inject_rng);
  return out;
}

TrialResult run_trial(const data::Corpus& corpus,
                      const ExperimentConfig& cfg, int trial_index) {
  const auto t0 = std::chrono::steady_clock::now();
  TrialResult row;
  row.trial = trial_index;
  row.kind = cfg.attack.kind;
  row.patch_size = cfg.attack.patch.size;
  row.placement = cfg.attack.patch.placement;
  try {
    const Rng trial =
        Rng(cfg.master_seed).child("trial-" + std::to_string(trial_index));

    const double test_fraction =
        1.0 - cfg.train_fraction - cfg.probe_fraction;
    const data::SplitIndices sp =
        data::split(corpus.size(),
                    {cfg.train_fraction, cfg.probe_fraction, test_fraction},
                    trial.child("split").seed());
    require(sp.test.size() >= 2, ErrorKind::spec,
            "test split too small to evaluate");
    require(!sp.probe.empty(), ErrorKind::spec, "probe split is empty");
    const data::Corpus train_c = data::select(corpus, sp.train);
    const data::Corpus probe_c = data::select(corpus, sp.probe);
    const data::Corpus test_c = data::select(corpus, sp.test);

    const StagedAttack atk = stage_attack(train_c, test_c, cfg, trial);
    row.poison_count = atk.poison_count;
    row.target_class = atk.target_class;

    model::TrainConfig tc = cfg.train;
    tc.seed = trial.child("train").seed();
    row.train_seed = tc.seed;
    auto ckpt =
        std::make_shared<model::Checkpoint>(model::train(atk.poisoned, tc));
    row.checkpoint = ckpt;
    const model::DualEncoderParams& params = ckpt->params;

    const eval::ZeroShotHead head = eval::build_zero_shot_head(
        params, corpus.vocab, corpus.max_seq_len, corpus.class_names,
        data::zero_shot_templates());
    const MatF test_emb = model::encode_image(params, test_c.images);
    const std::vector<int> zs_pred =
        eval::zero_shot_classify_embeddings(head, test_emb);
    row.zs_clean_acc = eval::accuracy(zs_pred, test_c.labels);

    eval::ProbeConfig pc;
    pc.epochs = cfg.eval.probe_epochs;
    pc.batch_size = cfg.eval.probe_batch_size;
    pc.lr = cfg.eval.probe_lr;
    pc.momentum = cfg.eval.probe_momentum;
    pc.weight_decay = cfg.eval.probe_weight_decay;
    pc.seed = trial.child("probe").seed();
    const MatF probe_emb = model::encode_image(params, probe_c.images);
    const eval::ProbeHead probe = eval::train_probe_embeddings(
        probe_emb, probe_c.labels, int(corpus.class_names.size()), pc);
    const std::vector<int> probe_pred =
        eval::probe_classify_embeddings(probe, test_emb);
    row.probe_clean_acc = eval::accuracy(probe_pred, test_c.labels);

    if (cfg.attack.kind == AttackKind::targeted) {
      const size_t ti = size_t(atk.target_pool_row);
      row.zs_target_hit = zs_pred[ti] == atk.target_class ? 1 : 0;
      row.probe_target_hit = probe_pred[ti] == atk.target_class ? 1 : 0;
    }

    // Evaluation always stamps the patch at its configured origin, even when
    // the attack used random placement.
    attack::PatchSpec eval_patch = cfg.attack.patch;
    eval_patch.placement = attack::Placement::consistent;
    Rng z_rng = trial.child("zpairs");
    row.z = eval::backdoor_z_score(params, test_c.images, eval_patch,
                                   cfg.eval.n_pairs, z_rng,
                                   cfg.eval.z_divisor);
    row.have_z = true;

    Rng curve_rng = trial.child("curve");
    row.curve = eval::similarity_agreement_curve(
        params, test_c.images, test_c.labels, cfg.eval.n_pairs, cfg.eval.bins,
        curve_rng);

    if (cfg.attack.kind == AttackKind::backdoor) {
      Rng bd_rng = trial.child("bd");
      row.bd = eval::backdoor_attack_success(params, head, test_c.images,
                                             eval_patch, atk.target_class,
                                             bd_rng);
      row.have_bd = true;
    }
  } catch (const std::exception& e) {
    row.failed = true;
    row.error = e.what();
  }
  row.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return row;
}

// ---- experiment driver ----

namespace {

std::vector<TrialResult> run_trials(const data::Corpus& corpus,
                                    const ExperimentConfig& cfg) {
  std::vector<TrialResult> rows(size_t(cfg.n_trials));
  const int workers = std::min(cfg.workers, cfg.n_trials);
  if (workers <= 1) {
    for (int t = 0; t < cfg.n_trials; ++t) rows[size_t(t)] = run_trial(corpus, cfg, t);
    return rows;
  }
  std::atomic<int> next{0};
  auto work = [&] {
    for (;;) {
      const int t = next.fetch_add(1);
      if (t >= cfg.n_trials) return;
      rows[size_t(t)] = run_trial(corpus, cfg, t);
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(size_t(workers));
  for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& th : pool) th.join();
  return rows;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  io::write_file(path, text);
}

// manifest.json lists every other regular file under dir with its checksum.
void write_dir_manifest(const std::filesystem::path& dir,
                        const std::string& kind) {
  std::map<std::string, json> files;
  for (const auto& entry :
       std::filesystem::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string rel =
        std::filesystem::relative(entry.path(), dir).generic_string();
    if (rel == "manifest.json") continue;
    // Wall-clock files are the one sanctioned nondeterminism; checksumming
    // them would break the byte-identical re-run guarantee.
    if (rel == "timings.csv" || rel.ends_with("/timings.csv")) continue;
    const std::string bytes = io::read_file(entry.path());
    files[rel] = json{{"bytes", bytes.size()},
                      {"checksum", io::checksum_hex(io::fnv1a64_bytes(bytes))}};
  }
  json manifest{{"version", 1}, {"kind", kind}, {"files", json(files)}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace

ExperimentResult run_experiment_on(const data::Corpus& corpus,
                                   const ExperimentConfig& config,
                                   const std::filesystem::path& dir) {
  validate(config);
  ExperimentResult result;
  result.config = config;
  result.trials = run_trials(corpus, config);
  if (dir.empty()) return result;

  std::filesystem::create_directories(dir);
  write_text(dir / "config.json",
             experiment_config_to_json(config).dump(2) + "\n");
  write_text(dir / "results.csv", results_csv(result));
  write_text(dir / "timings.csv", timings_csv(result));
  for (const TrialResult& row : result.trials) {
    const std::filesystem::path tdir =
        dir / ("trial-" + std::to_string(row.trial));
    std::filesystem::create_directories(tdir);
    if (row.checkpoint)
      model::save_checkpoint(*row.checkpoint, tdir / "checkpoint");
    if (!row.curve.empty()) write_text(tdir / "curve.csv", curve_csv(row.curve));
    if (row.have_z) write_text(tdir / "zscore.csv", zscore_csv(row.z));
  }
  write_report(dir, "csv");
  write_report(dir, "svg");
  write_dir_manifest(dir, "experiment");
  return result;
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  validate(config);
  const data::Corpus corpus = data::generate_corpus(config.corpus);
  return run_experiment_on(corpus, config, config.output_dir);
}

// ---- sweeps ----

ExperimentConfig apply_axis(const ExperimentConfig& base, SweepAxis axis,
                            const std::string& value) {
  ExperimentConfig cfg = base;
  auto as_integer = [&]() -> long long {
    size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(value, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    require(used == value.size() && !value.empty(), ErrorKind::argument,
            "sweep value '" + value + "' is not an integer");
    return v;
  };
  switch (axis) {
    case SweepAxis::poison_count: cfg.attack.poison_count = Index(as_integer()); break;
    case SweepAxis::patch_size: cfg.attack.patch.size = int(as_integer()); break;
    case SweepAxis::dataset_size: cfg.corpus.n_examples = Index(as_integer()); break;
    case SweepAxis::model_width: cfg.train.model_width = int(as_integer()); break;
    case SweepAxis::placement:
      cfg.attack.patch.placement = placement_from_string(value);
      break;
  }
  return cfg;
}

namespace {

std::string sanitize(const std::string& s) {
  std::string out;
  for (char ch : s)
    out += (std::isalnum(static_cast<unsigned char>(ch)) != 0) ? ch : '_';
  return out;
}

// Mean/std (population) over the parsed numeric cells of one column.
struct ColumnStats {
  Index n = 0;
  double mean = 0.0, stddev = 0.0;
};

ColumnStats column_stats(const std::vector<std::vector<std::string>>& rows,
                         size_t failed_col, size_t col) {
  std::vector<double> xs;
  for (const auto& row : rows) {
    if (row[failed_col] != "0") continue;
    if (row[col].empty()) continue;
    xs.push_back(std::strtod(row[col].c_str(), nullptr));
  }
  ColumnStats out;
  out.n = Index(xs.size());
  if (xs.empty()) return out;
  const nd::MeanVar mv = nd::mean_var(xs);
  out.mean = mv.mean;
  out.stddev = std::sqrt(mv.var);
  return out;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  size_t col(const std::string& name) const {
    for (size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    fail(ErrorKind::format, "results file lacks column '" + name + "'");
  }
};

CsvTable parse_csv(const std::string& text) {
  CsvTable table;
  size_t start = 0;
  bool first = true;
  while (start < text.size()) {
    size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    // Quoted fields may hold newlines; extend until quotes balance.
    while (std::count(text.begin() + long(start), text.begin() + long(end),
                      '"') %
               2 !=
           0) {
      end = text.find('\n', end + 1);
      if (end == std::string::npos) {
        end = text.size();
        break;
      }
    }
    const std::string line = text.substr(start, end - start);
    if (!line.empty()) {
      if (first)
        table.header = csv_split_line(line);
      else
        table.rows.push_back(csv_split_line(line));
      first = false;
    }
    start = end + 1;
  }
  return table;
}

const char* const kSummaryMetrics[] = {
    "zs_clean_acc",   "probe_clean_acc", "zs_target_hit",
    "probe_target_hit", "z",             "bd_patched_rate",
    "bd_unpatched_rate"};

std::string summary_csv_from(const CsvTable& table) {
  const size_t failed_col = table.col("failed");
  std::string out = "metric,n,mean,stddev\n";
  for (const char* metric : kSummaryMetrics) {
    const ColumnStats st =
        column_stats(table.rows, failed_col, table.col(metric));
    if (st.n == 0) continue;
    out += std::string(metric) + "," + std::to_string(st.n) + "," +
           fmt_g(st.mean) + "," + fmt_g(st.stddev) + "\n";
  }
  return out;
}

}  // namespace

SweepResult run_sweep(const SweepSpec& spec) {
  require(!spec.values.empty(), ErrorKind::spec, "sweep needs axis values");
  validate(spec.base);
  for (const std::string& v : spec.values)
    apply_axis(spec.base, spec.axis, v);  // fail fast on bad values

  SweepResult result;
  result.spec = spec;
  const std::filesystem::path root = spec.base.output_dir;
  std::filesystem::create_directories(root);

  // One base corpus isolates the swept axis; dataset-size points must
  // regenerate at their own size.
  data::Corpus base_corpus;
  if (spec.axis != SweepAxis::dataset_size)
    base_corpus = data::generate_corpus(spec.base.corpus);

  for (size_t i = 0; i < spec.values.size(); ++i) {
    ExperimentConfig cfg = apply_axis(spec.base, spec.axis, spec.values[i]);
    const std::filesystem::path dir =
        root / ("point-" + std::to_string(i) + "-" + sanitize(spec.values[i]));
    cfg.output_dir = dir.string();
    SweepPoint point;
    point.value = spec.values[i];
    if (spec.axis == SweepAxis::dataset_size) {
      const data::Corpus corpus = data::generate_corpus(cfg.corpus);
      point.result = run_experiment_on(corpus, cfg, dir);
    } else {
      point.result = run_experiment_on(base_corpus, cfg, dir);
    }
    result.points.push_back(std::move(point));
  }

  // Raw rows with the axis value prepended, plus per-point aggregates.
  const std::string axis_name = to_string(spec.axis);
  std::string raw;
  std::string summary =
      "axis,value,n,zs_clean_acc_mean,zs_clean_acc_stddev,success_mean,"
      "success_stddev,z_mean,z_stddev,bd_patched_mean,bd_patched_stddev\n";
  for (size_t i = 0; i < result.points.size(); ++i) {
    const CsvTable table =
        parse_csv(results_csv(result.points[i].result));
    if (i == 0) {
      raw = "axis,value";
      for (const auto& h : table.header) raw += "," + csv_field(h);
      raw += "\n";
    }
    for (const auto& row : table.rows) {
      raw += axis_name + "," + csv_field(result.points[i].value);
      for (const auto& cell : row) raw += "," + csv_field(cell);
      raw += "\n";
    }
    const size_t failed_col = table.col("failed");
    const ColumnStats acc =
        column_stats(table.rows, failed_col, table.col("zs_clean_acc"));
    const ColumnStats hit =
        column_stats(table.rows, failed_col, table.col("zs_target_hit"));
    const ColumnStats z = column_stats(table.rows, failed_col, table.col("z"));
    const ColumnStats bd =
        column_stats(table.rows, failed_col, table.col("bd_patched_rate"));
    summary += axis_name + "," + csv_field(result.points[i].value) + "," +
               std::to_string(acc.n);
    auto cells = [&](const ColumnStats& st) {
      summary += st.n == 0 ? ",," : "," + fmt_g(st.mean) + "," + fmt_g(st.stddev);
    };
    cells(acc);
    cells(hit);
    cells(z);
    cells(bd);
    summary += "\n";
  }
  write_text(root / "sweep_raw.csv", raw);
  write_text(root / "sweep_summary.csv", summary);
  write_text(root / "sweep.svg", [&] {
    // Headline metric per attack kind: backdoor -> z, targeted -> success,
    // none -> clean accuracy.
    std::string metric = "zs_clean_acc_mean";
    std::string label = "zero-shot accuracy";
    if (spec.base.attack.kind == AttackKind::backdoor) {
      metric = "z_mean";
      label = "backdoor z-score";
    } else if (spec.base.attack.kind == AttackKind::targeted) {
      metric = "success_mean";
      label = "attack success fraction";
    }
    const CsvTable table = parse_csv(summary);
    const size_t mcol = table.col(metric);
    const size_t scol = table.col(metric.substr(0, metric.size() - 5) + "_stddev");
    const size_t vcol = table.col("value");
    std::vector<std::string> names;
    std::vector<double> means, stds;
    for (const auto& row : table.rows) {
      if (row[mcol].empty()) continue;
      names.push_back(row[vcol]);
      means.push_back(std::strtod(row[mcol].c_str(), nullptr));
      stds.push_back(std::strtod(row[scol].c_str(), nullptr));
    }
    double lo = 0.0, hi = 1.0;
    if (!means.empty()) {
      lo = means[0] - stds[0];
      hi = means[0] + stds[0];
      for (size_t i = 1; i < means.size(); ++i) {
        lo = std::min(lo, means[i] - stds[i]);
        hi = std::max(hi, means[i] + stds[i]);
      }
    }
    if (hi - lo < 1e-9) {
      lo -= 1.0;
      hi += 1.0;
    }
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
    const double x0 = 70, x1 = 620, ytop = 30, ybot = 350;
    auto xat = [&](size_t i) {
      return names.size() <= 1
                 ? (x0 + x1) / 2
                 : x0 + double(i) * (x1 - x0) / double(names.size() - 1);
    };
    auto yat = [&](double v) {
      return ybot - (v - lo) / (hi - lo) * (ybot - ytop);
    };
    std::string svg =
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 640 400\">\n"
        "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n"
        "<line x1=\"70\" y1=\"350\" x2=\"620\" y2=\"350\" stroke=\"black\"/>\n"
        "<line x1=\"70\" y1=\"30\" x2=\"70\" y2=\"350\" stroke=\"black\"/>\n";
    std::string points;
    for (size_t i = 0; i < names.size(); ++i) {
      const double x = xat(i), y = yat(means[i]);
      points += (i ? " " : "") + fmt_svg(x) + "," + fmt_svg(y);
      svg += "<line x1=\"" + fmt_svg(x) + "\" y1=\"" + fmt_svg(yat(means[i] - stds[i])) +
             "\" x2=\"" + fmt_svg(x) + "\" y2=\"" + fmt_svg(yat(means[i] + stds[i])) +
             "\" stroke=\"#4878d0\"/>\n";
      svg += "<circle cx=\"" + fmt_svg(x) + "\" cy=\"" + fmt_svg(y) +
             "\" r=\"3\" fill=\"#4878d0\"/>\n";
      svg += "<text x=\"" + fmt_svg(x) + "\" y=\"370\" font-size=\"12\" "
             "text-anchor=\"middle\">" + names[i] + "</text>\n";
    }
    if (!points.empty())
      svg += "<polyline points=\"" + points +
             "\" fill=\"none\" stroke=\"#4878d0\" stroke-width=\"1.5\"/>\n";
    svg += "<text x=\"345\" y=\"392\" font-size=\"13\" text-anchor=\"middle\">" +
           axis_name + "</text>\n";
    svg += "<text x=\"16\" y=\"190\" font-size=\"13\" text-anchor=\"middle\" "
           "transform=\"rotate(-90 16 190)\">" + label + "</text>\n";
    svg += "<text x=\"62\" y=\"354\" font-size=\"11\" text-anchor=\"end\">" +
           fmt_svg(lo) + "</text>\n";
    svg += "<text x=\"62\" y=\"36\" font-size=\"11\" text-anchor=\"end\">" +
           fmt_svg(hi) + "</text>\n";
    svg += "</svg>\n";
    return svg;
  }());
  write_dir_manifest(root, "sweep");
  return result;
}

// ---- CSV primitives ----

std::string csv_field(const std::string& value) {
  if (value.find_first_of(",\"\n") == std::string::npos) return value;
  std::string out = "\"";
  for (char ch : value) {
    if (ch == '"') out += '"';
    out += ch;
  }
  out += '"';
  return out;
}

std::vector<std::string> csv_split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

// ---- result rendering ----

namespace {

const char* const kResultsHeader =
    "trial,train_seed,kind,poison_count,patch_size,placement,target_class,"
    "zs_clean_acc,probe_clean_acc,zs_target_hit,probe_target_hit,z,z_divisor,"
    "mean_clean,mean_backdoored,var_clean,z_pairs,bd_patched_rate,"
    "bd_unpatched_rate,failed,error";

std::string hit_cell(int hit) { return hit < 0 ? "" : std::to_string(hit); }

}  // namespace

std::string results_csv(const ExperimentResult& result) {
  std::string out = std::string(kResultsHeader) + "\n";
  for (const TrialResult& r : result.trials) {
    std::vector<std::string> cells;
    cells.push_back(std::to_string(r.trial));
    cells.push_back(std::to_string(r.train_seed));
    cells.push_back(to_string(r.kind));
    cells.push_back(std::to_string(r.poison_count));
    cells.push_back(std::to_string(r.patch_size));
    cells.push_back(placement_name(r.placement));
    cells.push_back(r.target_class < 0 ? "" : std::to_string(r.target_class));
    if (r.failed) {
      for (int i = 0; i < 12; ++i) cells.push_back("");
    } else {
      cells.push_back(fmt_g(r.zs_clean_acc));
      cells.push_back(fmt_g(r.probe_clean_acc));
      cells.push_back(hit_cell(r.zs_target_hit));
      cells.push_back(hit_cell(r.probe_target_hit));
      if (r.have_z) {
        cells.push_back(fmt_g(r.z.z));
        cells.push_back(divisor_name(r.z.divisor));
        cells.push_back(fmt_g(r.z.mean_clean));
        cells.push_back(fmt_g(r.z.mean_backdoored));
        cells.push_back(fmt_g(r.z.var_clean));
        cells.push_back(std::to_string(r.z.n_pairs));
      } else {
        for (int i = 0; i < 6; ++i) cells.push_back("");
      }
      if (r.have_bd) {
        cells.push_back(fmt_g(r.bd.patched_rate));
        cells.push_back(fmt_g(r.bd.unpatched_rate));
      } else {
        cells.push_back("");
        cells.push_back("");
      }
    }
    cells.push_back(r.failed ? "1" : "0");
    cells.push_back(r.error);
    std::string line;
    for (size_t i = 0; i < cells.size(); ++i)
      line += (i ? "," : "") + csv_field(cells[i]);
    out += line + "\n";
  }
  return out;
}

std::string timings_csv(const ExperimentResult& result) {
  std::string out = "trial,wall_seconds\n";
  for (const TrialResult& r : result.trials)
    out += std::to_string(r.trial) + "," + fmt_g(r.wall_seconds) + "\n";
  return out;
}

std::string curve_csv(const std::vector<eval::AgreementBin>& curve) {
  std::string out = "similarity,p_same,count\n";
  for (const eval::AgreementBin& bin : curve)
    out += fmt_g(bin.similarity) + "," + fmt_g(bin.p_same) + "," +
           std::to_string(bin.count) + "\n";
  return out;
}

std::string zscore_csv(const eval::ZScoreReport& report) {
  std::string out = "sim_clean,sim_backdoored\n";
  for (size_t i = 0; i < report.sims_clean.size(); ++i)
    out += fmt_g(double(report.sims_clean[i])) + "," +
           fmt_g(double(report.sims_backdoored[i])) + "\n";
  return out;
}

// ---- report re-rendering from disk ----

namespace {

const char* const kPalette[] = {"#4878d0", "#ee854a", "#6acc64", "#d65f5f",
                                "#956cb4", "#8c613c", "#dc7ec0", "#797979"};

std::string agreement_svg(
    const std::vector<std::pair<int, CsvTable>>& curves) {
  const double x0 = 70, x1 = 620, ytop = 30, ybot = 350;
  auto xat = [&](double s) { return x0 + (s + 1.0) / 2.0 * (x1 - x0); };
  auto yat = [&](double p) { return ybot - p * (ybot - ytop); };
  std::string svg =
      "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 640 400\">\n"
      "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n"
      "<line x1=\"70\" y1=\"350\" x2=\"620\" y2=\"350\" stroke=\"black\"/>\n"
      "<line x1=\"70\" y1=\"30\" x2=\"70\" y2=\"350\" stroke=\"black\"/>\n";
  for (int tick = 0; tick <= 4; ++tick) {
    const double s = -1.0 + 0.5 * tick;
    svg += "<text x=\"" + fmt_svg(xat(s)) +
           "\" y=\"366\" font-size=\"11\" text-anchor=\"middle\">" +
           fmt_svg(s) + "</text>\n";
    const double p = 0.25 * tick;
    svg += "<text x=\"64\" y=\"" + fmt_svg(yat(p) + 4) +
           "\" font-size=\"11\" text-anchor=\"end\">" + fmt_svg(p) +
           "</text>\n";
  }
  for (const auto& [trial, table] : curves) {
    const size_t scol = table.col("similarity");
    const size_t pcol = table.col("p_same");
    std::string points;
    for (const auto& row : table.rows) {
      const double s = std::strtod(row[scol].c_str(), nullptr);
      const double p = std::strtod(row[pcol].c_str(), nullptr);
      points += (points.empty() ? "" : " ") + fmt_svg(xat(s)) + "," +
                fmt_svg(yat(p));
    }
    if (points.empty()) continue;
    svg += "<polyline points=\"" + points + "\" fill=\"none\" stroke=\"" +
           kPalette[size_t(trial) % 8] + "\" stroke-width=\"1.5\"/>\n";
  }
  svg += "<text x=\"345\" y=\"392\" font-size=\"13\" text-anchor=\"middle\">"
         "pairwise cosine similarity</text>\n";
  svg += "<text x=\"16\" y=\"190\" font-size=\"13\" text-anchor=\"middle\" "
         "transform=\"rotate(-90 16 190)\">P[same label]</text>\n";
  svg += "</svg>\n";
  return svg;
}

std::string zhist_svg(int trial, const CsvTable& sims, int bins) {
  const size_t ccol = sims.col("sim_clean");
  const size_t bcol = sims.col("sim_backdoored");
  std::vector<Index> clean(size_t(bins), 0), bd(size_t(bins), 0);
  auto bin_of = [&](double s) {
    return std::clamp(int(std::floor((s + 1.0) / 2.0 * bins)), 0, bins - 1);
  };
  for (const auto& row : sims.rows) {
    ++clean[size_t(bin_of(std::strtod(row[ccol].c_str(), nullptr)))];
    ++bd[size_t(bin_of(std::strtod(row[bcol].c_str(), nullptr)))];
  }
  Index peak = 1;
  for (int b = 0; b < bins; ++b)
    peak = std::max({peak, clean[size_t(b)], bd[size_t(b)]});

  json meta{{"bins", bins},
            {"n_pairs", sims.rows.size()},
            {"clean", clean},
            {"backdoored", bd}};
  const double x0 = 70, x1 = 620, ytop = 30, ybot = 350;
  const double bw = (x1 - x0) / bins;
  auto yat = [&](Index c) {
    return ybot - double(c) / double(peak) * (ybot - ytop);
  };
  std::string svg =
      "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 640 400\">\n"
      "<metadata id=\"histogram\">" + meta.dump() + "</metadata>\n"
      "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n"
      "<line x1=\"70\" y1=\"350\" x2=\"620\" y2=\"350\" stroke=\"black\"/>\n"
      "<line x1=\"70\" y1=\"30\" x2=\"70\" y2=\"350\" stroke=\"black\"/>\n";
  for (int b = 0; b < bins; ++b) {
    const double x = x0 + b * bw;
    if (clean[size_t(b)] > 0)
      svg += "<rect x=\"" + fmt_svg(x) + "\" y=\"" + fmt_svg(yat(clean[size_t(b)])) +
             "\" width=\"" + fmt_svg(bw) + "\" height=\"" +
             fmt_svg(ybot - yat(clean[size_t(b)])) +
             "\" fill=\"#4878d0\" fill-opacity=\"0.5\"/>\n";
    if (bd[size_t(b)] > 0)
      svg += "<rect x=\"" + fmt_svg(x) + "\" y=\"" + fmt_svg(yat(bd[size_t(b)])) +
             "\" width=\"" + fmt_svg(bw) + "\" height=\"" +
             fmt_svg(ybot - yat(bd[size_t(b)])) +
             "\" fill=\"#d65f5f\" fill-opacity=\"0.5\"/>\n";
  }
  for (int tick = 0; tick <= 4; ++tick) {
    const double s = -1.0 + 0.5 * tick;
    svg += "<text x=\"" + fmt_svg(x0 + (s + 1.0) / 2.0 * (x1 - x0)) +
           "\" y=\"366\" font-size=\"11\" text-anchor=\"middle\">" +
           fmt_svg(s) + "</text>\n";
  }
  svg += "<text x=\"62\" y=\"36\" font-size=\"11\" text-anchor=\"end\">" +
         std::to_string(peak) + "</text>\n";
  svg += "<text x=\"345\" y=\"392\" font-size=\"13\" text-anchor=\"middle\">"
         "pairwise cosine similarity (trial " + std::to_string(trial) +
         "; blue clean, red patched)</text>\n";
  svg += "<text x=\"16\" y=\"190\" font-size=\"13\" text-anchor=\"middle\" "
         "transform=\"rotate(-90 16 190)\">pair count</text>\n";
  svg += "</svg>\n";
  return svg;
}

}  // namespace

void write_report(const std::filesystem::path& dir, const std::string& format) {
  require(format == "csv" || format == "svg", ErrorKind::argument,
          "unknown report format '" + format + "' (expected csv or svg)");
  const CsvTable results = parse_csv(io::read_file(dir / "results.csv"));
  require(!results.rows.empty(), ErrorKind::argument,
          "results are empty; nothing to report");

  if (format == "csv") {
    write_text(dir / "summary.csv", summary_csv_from(results));
    return;
  }

  const size_t trial_col = results.col("trial");
  const size_t failed_col = results.col("failed");
  std::vector<std::pair<int, CsvTable>> curves;
  int z_trial = -1;
  CsvTable z_sims;
  for (const auto& row : results.rows) {
    if (row[failed_col] != "0") continue;
    const int trial = int(std::strtol(row[trial_col].c_str(), nullptr, 10));
    const std::filesystem::path tdir = dir / ("trial-" + std::to_string(trial));
    if (std::filesystem::exists(tdir / "curve.csv"))
      curves.push_back({trial, parse_csv(io::read_file(tdir / "curve.csv"))});
    if (z_trial < 0 && std::filesystem::exists(tdir / "zscore.csv")) {
      z_trial = trial;
      z_sims = parse_csv(io::read_file(tdir / "zscore.csv"));
    }
  }
  if (!curves.empty())
    write_text(dir / "agreement.svg", agreement_svg(curves));
  if (z_trial >= 0) {
    const json cfg = io::parse_json(io::read_file(dir / "config.json"),
                                    "experiment config");
    const int bins =
        io::get_field<int>(io::get_field<json>(cfg, "eval"), "bins");
    write_text(dir / "zhist.svg", zhist_svg(z_trial, z_sims, bins));
  }
}

}  // namespace cplab::harness
