// Full-pipeline acceptance checks with pinned thresholds, one PASS/FAIL line
// per criterion. Unlike the unit suite these train real models: the dose
// response and the ablations run 64 trainings between them, roughly 45
// minutes on one core. Experiments are memoized, so criteria that share a
// configuration (the clean baseline feeds capability, dose point zero, the
// clean z bound, and the agreement curve) pay for it once.
//
//   acceptance            run everything
//   acceptance --only 3,5 run a subset (experiments still shared)
//   acceptance --list     print the criterion table
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cplab/attack.hpp"
#include "cplab/dataset.hpp"
#include "cplab/error.hpp"
#include "cplab/eval.hpp"
#include "cplab/harness.hpp"
#include "cplab/model.hpp"
#include "cplab/tape.hpp"
#include "cplab/types.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using cplab::ImageDims;
using cplab::Index;
using cplab::MatD;
using cplab::MatF;
using cplab::MatI;
using cplab::nd::TapeT;
using cplab::nd::Var;
using oracle::BuiltGraph;
using oracle::max_grad_error;
using oracle::random_matrix;
using DTape = TapeT<double>;
namespace harness = cplab::harness;
namespace data = cplab::data;
namespace attack = cplab::attack;
namespace eval = cplab::eval;
namespace model = cplab::model;

namespace {

// ---- pinned thresholds ----

constexpr double kGradTol = 1e-4;          // worst relative gradient error
constexpr double kGradSeconds = 60.0;      // gradient check wall budget
constexpr double kZeroShotFloor = 0.80;    // clean zero-shot top-1, mean
constexpr double kProbeFloor = 0.75;       // clean linear-probe top-1, mean
constexpr double kModelSeconds = 900.0;    // per-model wall budget, mean
constexpr double kDoseFloor0 = 0.20;       // success at 0 poisons (chance)
constexpr double kDoseCeil64 = 0.50;       // success at 64 poisons
constexpr int kDoseInversions = 1;         // tolerated mean inversions
constexpr double kZFloor = 3.0;            // backdoored mean z
constexpr double kPatchedFloor = 0.50;     // patched zero-shot success, mean
constexpr double kUnpatchedCeil = 0.15;    // unpatched rate, mean
constexpr double kCleanZBound = 1.0;       // |z| on every clean model
constexpr int kCurveInversions = 1;        // agreement curve inversions
constexpr double kOracleTol = 1e-6;        // z-score vs brute force

struct Verdict {
  bool pass = false;
  std::string detail;
};

double now_seconds() {
  using clock = std::chrono::steady_clock;
  static const clock::time_point start = clock::now();
  return std::chrono::duration<double>(clock::now() - start).count();
}

std::string fmt(const char* pattern, ...) {
  char buf[512];
  va_list args;
  va_start(args, pattern);
  std::vsnprintf(buf, sizeof buf, pattern, args);
  va_end(args);
  return buf;
}

// ---- shared experiments ----
//
// All experiments use the library defaults (10k examples, 10 classes,
// 8 trials, master seed 0) and differ only in the staged attack, so one
// generated corpus serves every run.

struct Lab {
  std::optional<data::Corpus> corpus;
  std::map<std::string, harness::ExperimentResult> memo;

  static harness::ExperimentConfig base_config() {
    harness::ExperimentConfig cfg;
    cfg.n_trials = 8;
    cfg.workers = 1;
    cfg.master_seed = 0;
    cfg.output_dir.clear();  // in memory, no artifacts
    return cfg;
  }

  const harness::ExperimentResult& run(
      const std::string& name,
      const std::function<void(harness::ExperimentConfig&)>& tweak) {
    auto it = memo.find(name);
    if (it != memo.end()) return it->second;
    harness::ExperimentConfig cfg = base_config();
    tweak(cfg);
    if (!corpus) {
      std::fprintf(stderr, "  [lab] generating the shared corpus...\n");
      corpus = data::generate_corpus(cfg.corpus);
    }
    std::fprintf(stderr, "  [lab] %s: %d trials...\n", name.c_str(),
                 cfg.n_trials);
    const double t0 = now_seconds();
    harness::ExperimentResult res = harness::run_experiment_on(*corpus, cfg, "");
    std::fprintf(stderr, "  [lab] %s done in %.0fs\n", name.c_str(),
                 now_seconds() - t0);
    return memo.emplace(name, std::move(res)).first->second;
  }

  const harness::ExperimentResult& targeted(Index count) {
    return run("targeted-" + std::to_string(count),
               [count](harness::ExperimentConfig& c) {
                 c.attack.kind = harness::AttackKind::targeted;
                 c.attack.poison_count = count;
               });
  }

  const harness::ExperimentResult& backdoor(Index count, int patch,
                                            attack::Placement placement) {
    std::string name = "backdoor-" + std::to_string(count) + "-p" +
                       std::to_string(patch) +
                       (placement == attack::Placement::random ? "-random" : "");
    return run(name, [=](harness::ExperimentConfig& c) {
      c.attack.kind = harness::AttackKind::backdoor;
      c.attack.poison_count = count;
      c.attack.patch.size = patch;
      c.attack.patch.placement = placement;
    });
  }
};

// First failed trial's error, or empty if the experiment is clean.
std::string first_failure(const harness::ExperimentResult& res) {
  for (const auto& t : res.trials)
    if (t.failed) return "trial " + std::to_string(t.trial) + ": " + t.error;
  return "";
}

double mean_of(const harness::ExperimentResult& res,
               const std::function<double(const harness::TrialResult&)>& get) {
  double sum = 0.0;
  for (const auto& t : res.trials) sum += get(t);
  return sum / double(res.trials.size());
}

double success_rate(const harness::ExperimentResult& res) {
  double hits = 0.0;
  for (const auto& t : res.trials) hits += t.zs_target_hit == 1 ? 1.0 : 0.0;
  return hits / double(res.trials.size());
}

// ---- criterion 1: gradients ----

Verdict check_gradients(Lab&) {
  const double t0 = now_seconds();
  double worst = 0.0;
  auto probe = [&worst](auto&& build, std::vector<MatD> inputs) {
    worst = std::max(worst, max_grad_error(build, std::move(inputs)));
  };

  // Dense ops in two composite graphs covering matmul, matmul_nt, transpose,
  // add, add_rowvec, scale, mul_scalar, relu, exp, l2_normalize, sum.
  probe(
      [](DTape& t, const std::vector<MatD>& xs) {
        Var a = t.leaf(xs[0], true);
        Var b = t.leaf(xs[1], true);
        Var bias = t.leaf(xs[2], true);
        Var s = t.leaf(xs[3], true);
        Var y = t.add_rowvec(t.matmul(a, b), bias);
        Var z = t.mul_scalar(t.scale(t.relu(y), 0.7), s);
        return BuiltGraph{t.sum(z), {a, b, bias, s}};
      },
      {random_matrix(3, 4, 101), random_matrix(4, 5, 102),
       random_matrix(1, 5, 103), random_matrix(1, 1, 104)});
  probe(
      [](DTape& t, const std::vector<MatD>& xs) {
        Var a = t.leaf(xs[0], true);
        Var b = t.leaf(xs[1], true);
        Var p = t.matmul_nt(t.l2_normalize(a), t.l2_normalize(b));
        return BuiltGraph{t.sum(t.exp(t.transpose(t.add(p, p)))), {a, b}};
      },
      {random_matrix(3, 6, 105), random_matrix(5, 6, 106)});

  // softmax cross entropy
  probe(
      [](DTape& t, const std::vector<MatD>& xs) {
        Var logits = t.leaf(xs[0], true);
        return BuiltGraph{t.softmax_xent(logits, {2, 0, 1}), {logits}};
      },
      {random_matrix(3, 4, 107)});

  // token-table mean with pad masking
  {
    MatI tokens(3, 4);
    tokens << 1, 2, 0, 0, 3, 3, 5, 6, 2, 4, 0, 0;
    probe(
        [&tokens](DTape& t, const std::vector<MatD>& xs) {
          Var tab = t.leaf(xs[0], true);
          Var e = t.embedding_mean(tab, tokens, 0);
          return BuiltGraph{t.sum(t.relu(e)), {tab}};
        },
        {random_matrix(7, 3, 108)});
  }

  // convolution
  {
    const ImageDims dims{5, 6, 2};
    const int k = 3, filters = 4;
    probe(
        [dims, k](DTape& t, const std::vector<MatD>& xs) {
          Var i = t.leaf(xs[0], true);
          Var w = t.leaf(xs[1], true);
          Var b = t.leaf(xs[2], true);
          Var y = t.conv2d(i, w, b, dims, k);
          return BuiltGraph{t.sum(t.relu(y)), {i, w, b}};
        },
        {random_matrix(2, dims.pixels(), 109),
         random_matrix(Index(k) * k * dims.channels, filters, 110),
         random_matrix(1, filters, 111)});
  }

  // the exact training-loss topology: two 3x4 towers -> normalize ->
  // temperature-scaled similarity -> symmetric cross entropy
  {
    std::vector<int> diag = {0, 1, 2};
    probe(
        [&diag](DTape& t, const std::vector<MatD>& xs) {
          Var lu = t.leaf(xs[0], true);
          Var lv = t.leaf(xs[1], true);
          Var ls = t.leaf(xs[2], true);
          Var logits = t.mul_scalar(
              t.matmul_nt(t.l2_normalize(lu), t.l2_normalize(lv)), t.exp(ls));
          Var loss = t.scale(t.add(t.softmax_xent(logits, diag),
                                   t.softmax_xent(t.transpose(logits), diag)),
                             0.5);
          return BuiltGraph{loss, {lu, lv, ls}};
        },
        {random_matrix(3, 4, 112), random_matrix(3, 4, 113),
         MatD::Constant(1, 1, std::log(1.0 / 0.07))});
  }

  const double elapsed = now_seconds() - t0;
  const bool pass = worst < kGradTol && elapsed < kGradSeconds;
  return {pass, fmt("worst rel err %.2e (tol %.0e) in %.1fs", worst, kGradTol,
                    elapsed)};
}

// ---- criterion 2: clean capability ----

Verdict check_clean_capability(Lab& lab) {
  const auto& res = lab.targeted(0);
  if (auto err = first_failure(res); !err.empty()) return {false, err};
  const double zs = mean_of(res, [](const auto& t) { return t.zs_clean_acc; });
  const double pr =
      mean_of(res, [](const auto& t) { return t.probe_clean_acc; });
  const double wall =
      mean_of(res, [](const auto& t) { return t.wall_seconds; });
  const bool pass =
      zs >= kZeroShotFloor && pr >= kProbeFloor && wall <= kModelSeconds;
  return {pass, fmt("mean zero-shot %.3f (floor %.2f), probe %.3f (floor "
                    "%.2f), %.0fs/model (budget %.0fs)",
                    zs, kZeroShotFloor, pr, kProbeFloor, wall, kModelSeconds)};
}

// ---- criterion 3: dose response ----

Verdict check_dose_response(Lab& lab) {
  const Index counts[] = {0, 4, 16, 64};
  double rate[4];
  for (int i = 0; i < 4; ++i) {
    const auto& res = lab.targeted(counts[i]);
    if (auto err = first_failure(res); !err.empty()) return {false, err};
    rate[i] = success_rate(res);
  }
  int inversions = 0;
  for (int i = 0; i + 1 < 4; ++i)
    if (rate[i + 1] < rate[i]) ++inversions;
  const bool pass = rate[0] <= kDoseFloor0 && rate[3] >= kDoseCeil64 &&
                    inversions <= kDoseInversions;
  return {pass, fmt("success 0:%.3f 4:%.3f 16:%.3f 64:%.3f, %d inversion(s); "
                    "need <=%.2f at 0, >=%.2f at 64, <=%d inversions",
                    rate[0], rate[1], rate[2], rate[3], inversions,
                    kDoseFloor0, kDoseCeil64, kDoseInversions)};
}

// ---- criterion 4: backdoor efficacy ----

Verdict check_backdoor_efficacy(Lab& lab) {
  const auto& bd = lab.backdoor(50, 4, attack::Placement::consistent);
  if (auto err = first_failure(bd); !err.empty()) return {false, err};
  const double z = mean_of(bd, [](const auto& t) { return t.z.z; });
  const double patched =
      mean_of(bd, [](const auto& t) { return t.bd.patched_rate; });
  const double unpatched =
      mean_of(bd, [](const auto& t) { return t.bd.unpatched_rate; });

  const auto& clean = lab.targeted(0);
  if (auto err = first_failure(clean); !err.empty()) return {false, err};
  double worst_clean_z = 0.0;
  for (const auto& t : clean.trials)
    worst_clean_z = std::max(worst_clean_z, std::abs(t.z.z));

  const bool pass = z > kZFloor && patched >= kPatchedFloor &&
                    unpatched <= kUnpatchedCeil &&
                    worst_clean_z < kCleanZBound;
  return {pass, fmt("mean z %.2f (floor %.1f), patched %.3f (floor %.2f), "
                    "unpatched %.3f (ceil %.2f), clean max |z| %.2f (bound "
                    "%.1f)",
                    z, kZFloor, patched, kPatchedFloor, unpatched,
                    kUnpatchedCeil, worst_clean_z, kCleanZBound)};
}

// ---- criterion 5: placement ablation ----

Verdict check_placement(Lab& lab) {
  const auto& cons = lab.backdoor(10, 4, attack::Placement::consistent);
  const auto& rand = lab.backdoor(10, 4, attack::Placement::random);
  for (const auto* res : {&cons, &rand})
    if (auto err = first_failure(*res); !err.empty()) return {false, err};
  const double zc = mean_of(cons, [](const auto& t) { return t.z.z; });
  const double zr = mean_of(rand, [](const auto& t) { return t.z.z; });
  return {zc >= zr, fmt("10 poisons: mean z consistent %.2f vs random %.2f",
                        zc, zr)};
}

// ---- criterion 6: patch-size ablation ----

Verdict check_patch_size(Lab& lab) {
  const auto& small = lab.backdoor(50, 1, attack::Placement::consistent);
  const auto& large = lab.backdoor(50, 4, attack::Placement::consistent);
  for (const auto* res : {&small, &large})
    if (auto err = first_failure(*res); !err.empty()) return {false, err};
  const double z1 = mean_of(small, [](const auto& t) { return t.z.z; });
  const double z4 = mean_of(large, [](const auto& t) { return t.z.z; });
  return {z1 < z4, fmt("mean z %.2f at 1x1 vs %.2f at 4x4", z1, z4)};
}

// ---- criterion 7: z-score oracle ----

Verdict check_z_oracle(Lab&) {
  // Four 1x2x3 images; a 1x1 patch at the origin overwrites the first pixel
  // (columns 0..2) with ones. The encoder is the identity, so everything is
  // checkable by hand at double precision.
  const ImageDims dims{1, 2, 3};
  MatF images(4, dims.pixels());
  images << 0.1f, 0.2f, 0.3f, 0.9f, 0.1f, 0.4f,
            0.8f, 0.7f, 0.1f, 0.2f, 0.5f, 0.3f,
            0.4f, 0.4f, 0.9f, 0.6f, 0.2f, 0.8f,
            0.3f, 0.9f, 0.5f, 0.1f, 0.7f, 0.2f;
  attack::PatchSpec patch;
  patch.size = 1;
  const eval::EncodeFn identity = [](const MatF& m) { return m; };

  MatD clean = images.cast<double>();
  MatD patched = clean;
  patched.leftCols(3).setOnes();
  for (MatD* m : {&clean, &patched})
    for (Index i = 0; i < m->rows(); ++i) m->row(i) /= m->row(i).norm();

  std::vector<double> sc, sb;
  for (Index i = 0; i < 4; ++i)
    for (Index j = i + 1; j < 4; ++j) {
      sc.push_back(clean.row(i).dot(clean.row(j)));
      sb.push_back(patched.row(i).dot(patched.row(j)));
    }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / double(v.size());
  };
  const double mc = mean(sc), mb = mean(sb);
  double var = 0.0;
  for (double x : sc) var += (x - mc) * (x - mc);
  var /= double(sc.size());

  double worst = 0.0;
  for (auto divisor : {eval::ZDivisor::variance, eval::ZDivisor::stddev}) {
    cplab::nd::Rng rng(3);
    const eval::ZScoreReport rep = eval::backdoor_z_score(
        identity, images, dims, patch, /*n_pairs=*/6, rng, divisor);
    if (!rep.exhaustive || rep.n_pairs != 6)
      return {false, "expected exhaustive enumeration of all 6 pairs"};
    const double want =
        (mb - mc) / (divisor == eval::ZDivisor::variance ? var : std::sqrt(var));
    worst = std::max(worst, std::abs(rep.z - want));
    worst = std::max(worst, std::abs(rep.mean_clean - mc));
    worst = std::max(worst, std::abs(rep.mean_backdoored - mb));
    worst = std::max(worst, std::abs(rep.var_clean - var));
  }
  return {worst < kOracleTol,
          fmt("worst |report - brute force| %.2e (tol %.0e), both divisors",
              worst, kOracleTol)};
}

// ---- criterion 8: similarity-agreement monotonicity ----

Verdict check_agreement_curve(Lab& lab) {
  const auto& res = lab.targeted(0);
  if (auto err = first_failure(res); !err.empty()) return {false, err};
  const auto& curve = res.trials.front().curve;
  if (curve.size() < 2) return {false, "curve has fewer than two bins"};
  int inversions = 0;
  for (size_t i = 0; i + 1 < curve.size(); ++i)
    if (curve[i + 1].p_same < curve[i].p_same) ++inversions;
  std::ostringstream bins;
  for (const auto& b : curve) bins << fmt(" %.2f", b.p_same);
  return {inversions <= kCurveInversions,
          fmt("%d inversion(s) over %zu populated bins (allowed %d):%s",
              inversions, curve.size(), kCurveInversions, bins.str().c_str())};
}

// ---- criterion 9: determinism ----

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

// Byte-compares every file under the two roots except wall-clock timings.
std::string compare_trees(const fs::path& a, const fs::path& b) {
  std::vector<fs::path> rel;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file() && e.path().filename() != "timings.csv")
      rel.push_back(fs::relative(e.path(), a));
  for (const auto& r : rel) {
    if (!fs::exists(b / r)) return "missing " + r.string();
    if (read_bytes(a / r) != read_bytes(b / r)) return "differs: " + r.string();
  }
  return "";
}

Verdict check_determinism(Lab&) {
  harness::ExperimentConfig cfg = Lab::base_config();
  cfg.corpus.n_examples = 600;
  cfg.corpus.n_classes = 5;
  cfg.corpus.dims = ImageDims{16, 16, 3};
  cfg.attack.kind = harness::AttackKind::backdoor;
  cfg.attack.poison_count = 6;
  cfg.train.epochs = 3;
  cfg.train.batch_size = 64;
  cfg.train.embed_dim = 32;
  cfg.eval.n_pairs = 500;
  cfg.eval.probe_epochs = 15;
  cfg.eval.probe_batch_size = 32;
  cfg.n_trials = 2;

  const fs::path root = fs::temp_directory_path() / "cplab_acceptance";
  fs::remove_all(root);
  const data::Corpus corpus = data::generate_corpus(cfg.corpus);
  harness::run_experiment_on(corpus, cfg, root / "a");
  harness::run_experiment_on(corpus, cfg, root / "b");
  if (auto diff = compare_trees(root / "a", root / "b"); !diff.empty())
    return {false, "repeat run " + diff};

  // corpus round trip: save -> load -> save, bit-exact
  data::save_corpus(corpus, root / "c1");
  data::save_corpus(data::load_corpus(root / "c1"), root / "c2");
  if (auto diff = compare_trees(root / "c1", root / "c2"); !diff.empty())
    return {false, "corpus round trip " + diff};

  // checkpoint round trip on a real trained artifact
  const fs::path ck = root / "a" / "trial-0" / "checkpoint";
  model::save_checkpoint(model::load_checkpoint(ck), root / "ck2");
  if (auto diff = compare_trees(ck, root / "ck2"); !diff.empty())
    return {false, "checkpoint round trip " + diff};

  fs::remove_all(root);
  return {true, "repeat runs byte-identical; corpus and checkpoint "
                "round-trip bit-exact"};
}

struct Criterion {
  int number;
  const char* name;
  Verdict (*check)(Lab&);
};

const Criterion kCriteria[] = {
    {1, "gradient correctness", check_gradients},
    {2, "clean capability", check_clean_capability},
    {3, "targeted dose response", check_dose_response},
    {4, "backdoor efficacy", check_backdoor_efficacy},
    {5, "patch placement ablation", check_placement},
    {6, "patch size ablation", check_patch_size},
    {7, "z-score oracle", check_z_oracle},
    {8, "similarity-agreement monotonicity", check_agreement_curve},
    {9, "determinism and round trips", check_determinism},
};

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--list") {
      for (const auto& c : kCriteria)
        std::printf("%d  %s\n", c.number, c.name);
      return 0;
    }
    if (arg == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string tok; std::getline(ss, tok, ',');)
        selected.push_back(std::atoi(tok.c_str()));
      continue;
    }
    std::fprintf(stderr, "usage: %s [--only N[,N...]] [--list]\n", argv[0]);
    return 2;
  }

  Lab lab;
  bool all_pass = true;
  for (const auto& c : kCriteria) {
    if (!selected.empty() &&
        std::find(selected.begin(), selected.end(), c.number) ==
            selected.end())
      continue;
    const double t0 = now_seconds();
    Verdict v;
    try {
      v = c.check(lab);
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    all_pass = all_pass && v.pass;
    std::printf("[%d] %s  %s: %s (%.0fs)\n", c.number,
                v.pass ? "PASS" : "FAIL", c.name, v.detail.c_str(),
                now_seconds() - t0);
    std::fflush(stdout);
  }
  return all_pass ? 0 : 1;
}
