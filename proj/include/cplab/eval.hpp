// Downstream measurement: zero-shot classification from prompt embeddings,
// linear probes on frozen embeddings, backdoor z-scores over pairwise
// similarities, similarity/agreement curves, and attack success rates.
//
// The pairwise metrics take the encoder as a callback so tests can swap in
// hand-built embedding functions; params-based overloads wrap the real model.
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cplab/attack.hpp"
#include "cplab/dataset.hpp"
#include "cplab/model.hpp"
#include "cplab/rng.hpp"
#include "cplab/types.hpp"

namespace cplab::eval {

// ---- zero-shot head ----

struct ZeroShotHead {
  MatF class_embeds;  // K x d, unit rows
  std::vector<std::string> class_names;
  Index n_classes() const { return class_embeds.rows(); }
};

// Per class: embed every instantiated prompt, average, re-normalize.
ZeroShotHead build_zero_shot_head(const model::DualEncoderParams& params,
                                  const data::Vocab& vocab, int max_seq_len,
                                  const std::vector<std::string>& class_names,
                                  const std::vector<std::string>& templates);

// Argmax class per embedding row (rows are re-normalized first, so any
// positive rescaling of an embedding cannot change its prediction).
std::vector<int> zero_shot_classify_embeddings(const ZeroShotHead& head,
                                               const MatF& embeds);
std::vector<int> zero_shot_classify(const ZeroShotHead& head,
                                    const model::DualEncoderParams& params,
                                    const MatF& images);

// ---- linear probe ----

struct ProbeConfig {
  int epochs = 60;
  Index batch_size = 128;
  float lr = 0.1f;
  float momentum = 0.9f;
  float weight_decay = 0.0f;
  uint64_t seed = 0;
  bool operator==(const ProbeConfig&) const = default;
};

struct ProbeHead {
  MatF w;  // d x K
  MatF b;  // 1 x K
  Index n_classes() const { return w.cols(); }
};

// Multinomial logistic regression over fixed embedding rows, same SGD core
// as the encoder. Fewer than two distinct labels is a degenerate error.
ProbeHead train_probe_embeddings(const MatF& embeds,
                                 const std::vector<int32_t>& labels,
                                 int n_classes, const ProbeConfig& config);
// Embeds `images` with the (frozen) encoder first.
ProbeHead train_linear_probe(const model::DualEncoderParams& params,
                             const MatF& images,
                             const std::vector<int32_t>& labels, int n_classes,
                             const ProbeConfig& config);

std::vector<int> probe_classify_embeddings(const ProbeHead& head,
                                           const MatF& embeds);
std::vector<int> probe_classify(const ProbeHead& head,
                                const model::DualEncoderParams& params,
                                const MatF& images);

// ---- success accounting ----

// Mean of per-trial booleans; empty input is an argument error.
double success_fraction(const std::vector<uint8_t>& hits);

float accuracy(const std::vector<int>& predicted,
               const std::vector<int32_t>& labels);

// ---- backdoor z-score ----

enum class ZDivisor { variance, stddev };

struct ZScoreReport {
  double z = 0.0;
  double mean_clean = 0.0;
  double mean_backdoored = 0.0;
  double var_clean = 0.0;
  Index n_pairs = 0;  // pairs actually used
  ZDivisor divisor = ZDivisor::variance;
  bool exhaustive = false;  // all unordered pairs, no sampling
  std::vector<float> sims_clean, sims_backdoored;  // per pair, for histograms
};

using EncodeFn = std::function<MatF(const MatF&)>;

// Embeds the images clean and patched, then compares pairwise cosine
// similarities over the same pair sample:
//   z = (Mean patched - Mean clean) / Var clean        (variance mode)
//   z = (Mean patched - Mean clean) / Std clean        (stddev mode)
// rng draws patch offsets first (random placement only), then pair indices.
// n_pairs >= n(n-1)/2 switches to exact enumeration of all pairs.
ZScoreReport backdoor_z_score(const EncodeFn& encode, const MatF& images,
                              const ImageDims& dims,
                              const attack::PatchSpec& patch, Index n_pairs,
                              nd::Rng& rng,
                              ZDivisor divisor = ZDivisor::variance);
ZScoreReport backdoor_z_score(const model::DualEncoderParams& params,
                              const MatF& images,
                              const attack::PatchSpec& patch, Index n_pairs,
                              nd::Rng& rng,
                              ZDivisor divisor = ZDivisor::variance);

// ---- similarity / agreement curve ----

struct AgreementBin {
  double similarity;  // bin center over [-1, 1]
  double p_same;      // empirical P[labels agree] within the bin
  Index count;
};

// Bins sampled pairs by embedding cosine similarity; empty bins are omitted
// rather than reported as zero.
std::vector<AgreementBin> similarity_agreement_curve(
    const EncodeFn& encode, const MatF& images,
    const std::vector<int32_t>& labels, Index n_pairs, int bins, nd::Rng& rng);
std::vector<AgreementBin> similarity_agreement_curve(
    const model::DualEncoderParams& params, const MatF& images,
    const std::vector<int32_t>& labels, Index n_pairs, int bins, nd::Rng& rng);

// ---- backdoor success rate ----

struct BackdoorSuccess {
  double patched_rate = 0.0;
  double unpatched_rate = 0.0;  // chance baseline on the same images
  std::vector<uint8_t> patched_hits, unpatched_hits;
};

BackdoorSuccess backdoor_attack_success(const model::DualEncoderParams& params,
                                        const ZeroShotHead& head,
                                        const MatF& images,
                                        const attack::PatchSpec& patch,
                                        int target_class, nd::Rng& rng);

}  // namespace cplab::eval
