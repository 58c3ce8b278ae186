#include "cplab/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include "cplab/error.hpp"
#include "cplab/linalg.hpp"
#include "cplab/optim.hpp"
#include "cplab/tape.hpp"

namespace cplab::eval {

using nd::Rng;

ZeroShotHead build_zero_shot_head(const model::DualEncoderParams& params,
                                  const data::Vocab& vocab, int max_seq_len,
                                  const std::vector<std::string>& class_names,
                                  const std::vector<std::string>& templates) {
  require(!class_names.empty(), ErrorKind::argument, "no classes given");
  require(!templates.empty(), ErrorKind::argument, "no prompt templates given");

  ZeroShotHead head;
  head.class_names = class_names;
  head.class_embeds.resize(Index(class_names.size()), params.config.embed_dim);
  const Index t = Index(templates.size());
  MatI tokens(t, max_seq_len);
  for (size_t k = 0; k < class_names.size(); ++k) {
    const auto prompts = data::zero_shot_prompts({class_names[k]}, templates);
    for (Index i = 0; i < t; ++i) {
      const auto ids = data::tokenize(prompts[size_t(i)], vocab, max_seq_len);
      for (int j = 0; j < max_seq_len; ++j) tokens(i, j) = ids[size_t(j)];
    }
    const MatF emb = model::encode_text(params, tokens);
    head.class_embeds.row(Index(k)) = emb.colwise().mean();
  }
  head.class_embeds = nd::l2_normalize_rows(head.class_embeds);
  return head;
}

std::vector<int> zero_shot_classify_embeddings(const ZeroShotHead& head,
                                               const MatF& embeds) {
  require(embeds.cols() == head.class_embeds.cols(), ErrorKind::dimension,
          "embedding width does not match the head");
  const MatF scores =
      nd::l2_normalize_rows(embeds) * head.class_embeds.transpose();
  return nd::row_argmax(scores);
}

std::vector<int> zero_shot_classify(const ZeroShotHead& head,
                                    const model::DualEncoderParams& params,
                                    const MatF& images) {
  return zero_shot_classify_embeddings(head, model::encode_image(params, images));
}

ProbeHead train_probe_embeddings(const MatF& embeds,
                                 const std::vector<int32_t>& labels,
                                 int n_classes, const ProbeConfig& config) {
  const Index n = embeds.rows();
  require(n > 0, ErrorKind::argument, "no embeddings to fit");
  require(Index(labels.size()) == n, ErrorKind::dimension,
          "one label per embedding row required");
  require(n_classes >= 2, ErrorKind::argument, "need at least two classes");
  require(config.epochs >= 0 && config.batch_size >= 2 && config.lr > 0.0f,
          ErrorKind::argument, "bad probe config");

  int distinct = 0;
  std::vector<uint8_t> seen(size_t(n_classes), 0);
  for (int32_t l : labels) {
    require(l >= 0 && l < n_classes, ErrorKind::argument,
            "label outside [0, n_classes)");
    if (!seen[size_t(l)]) {
      seen[size_t(l)] = 1;
      ++distinct;
    }
  }
  require(distinct >= 2, ErrorKind::degenerate,
          "probe split holds a single class");

  const Index steps_per_epoch = n / config.batch_size;
  require(config.epochs == 0 || steps_per_epoch >= 1, ErrorKind::argument,
          "probe batch_size exceeds the split");

  ProbeHead head;
  head.w = MatF::Zero(embeds.cols(), n_classes);
  head.b = MatF::Zero(1, n_classes);

  nd::SgdMomentum opt;
  opt.lr = config.lr;
  opt.momentum = config.momentum;
  opt.weight_decay = config.weight_decay;

  const Rng probe_rng = Rng(config.seed).child("probe");
  MatF xb(config.batch_size, embeds.cols());
  std::vector<int> yb(size_t(config.batch_size));
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng epoch_rng = probe_rng.child("epoch-" + std::to_string(epoch));
    const std::vector<Index> perm = epoch_rng.permutation(n);
    for (Index s = 0; s < steps_per_epoch; ++s) {
      for (Index r = 0; r < config.batch_size; ++r) {
        const Index src = perm[size_t(s * config.batch_size + r)];
        xb.row(r) = embeds.row(src);
        yb[size_t(r)] = int(labels[size_t(src)]);
      }
      nd::Tape tape;
      nd::Var x = tape.leaf(xb);
      nd::Var w = tape.leaf(head.w, true);
      nd::Var b = tape.leaf(head.b, true);
      nd::Var logits = tape.add_rowvec(tape.matmul(x, w), b);
      nd::Var loss = tape.softmax_xent(logits, yb);
      tape.backward(loss);
      opt.step(0, head.w, tape.grad(w));
      opt.step(1, head.b, tape.grad(b));
    }
  }
  return head;
}

ProbeHead train_linear_probe(const model::DualEncoderParams& params,
                             const MatF& images,
                             const std::vector<int32_t>& labels, int n_classes,
                             const ProbeConfig& config) {
  return train_probe_embeddings(model::encode_image(params, images), labels,
                                n_classes, config);
}

std::vector<int> probe_classify_embeddings(const ProbeHead& head,
                                           const MatF& embeds) {
  require(embeds.cols() == head.w.rows(), ErrorKind::dimension,
          "embedding width does not match the probe");
  const MatF scores = (embeds * head.w).rowwise() + head.b.row(0);
  return nd::row_argmax(scores);
}

std::vector<int> probe_classify(const ProbeHead& head,
                                const model::DualEncoderParams& params,
                                const MatF& images) {
  return probe_classify_embeddings(head, model::encode_image(params, images));
}

double success_fraction(const std::vector<uint8_t>& hits) {
  require(!hits.empty(), ErrorKind::argument, "no trials to average");
  double sum = 0.0;
  for (uint8_t h : hits) sum += h ? 1.0 : 0.0;
  return sum / double(hits.size());
}

float accuracy(const std::vector<int>& predicted,
               const std::vector<int32_t>& labels) {
  require(predicted.size() == labels.size(), ErrorKind::dimension,
          "prediction/label count mismatch");
  require(!predicted.empty(), ErrorKind::argument, "no predictions");
  Index hits = 0;
  for (size_t i = 0; i < predicted.size(); ++i)
    if (predicted[i] == int(labels[i])) ++hits;
  return float(double(hits) / double(predicted.size()));
}

namespace {

// Unordered pair sample shared by the pairwise metrics: exhaustive when the
// budget covers all n(n-1)/2 pairs, otherwise uniform with replacement.
struct PairSample {
  std::vector<std::pair<Index, Index>> pairs;
  bool exhaustive = false;
};

PairSample sample_pairs(Index n, Index n_pairs, Rng& rng) {
  require(n >= 2, ErrorKind::argument, "need at least two images");
  require(n_pairs >= 1, ErrorKind::argument, "n_pairs must be >= 1");
  PairSample out;
  const Index total = n * (n - 1) / 2;
  if (n_pairs >= total) {
    out.exhaustive = true;
    out.pairs.reserve(size_t(total));
    for (Index i = 0; i < n; ++i)
      for (Index j = i + 1; j < n; ++j) out.pairs.push_back({i, j});
  } else {
    out.pairs.reserve(size_t(n_pairs));
    for (Index k = 0; k < n_pairs; ++k) {
      const Index i = Index(rng.below(uint64_t(n)));
      Index j = Index(rng.below(uint64_t(n - 1)));
      if (j >= i) ++j;
      out.pairs.push_back({i, j});
    }
  }
  return out;
}

std::vector<double> pair_sims(const MatD& emb,
                              const std::vector<std::pair<Index, Index>>& ps) {
  std::vector<double> sims;
  sims.reserve(ps.size());
  for (const auto& [i, j] : ps) sims.push_back(emb.row(i).dot(emb.row(j)));
  return sims;
}

}  // namespace

ZScoreReport backdoor_z_score(const EncodeFn& encode, const MatF& images,
                              const ImageDims& dims,
                              const attack::PatchSpec& patch, Index n_pairs,
                              nd::Rng& rng, ZDivisor divisor) {
  const MatF patched = attack::apply_patch_batch(images, dims, patch, rng);
  const PairSample sample = sample_pairs(images.rows(), n_pairs, rng);

  // The variance divisor can be tiny, so the statistic runs in double from
  // the embeddings onward.
  const MatD emb_clean = nd::l2_normalize_rows(MatD(encode(images).cast<double>()));
  const MatD emb_bd = nd::l2_normalize_rows(MatD(encode(patched).cast<double>()));

  ZScoreReport report;
  report.divisor = divisor;
  report.exhaustive = sample.exhaustive;
  report.n_pairs = Index(sample.pairs.size());
  const std::vector<double> sc = pair_sims(emb_clean, sample.pairs);
  const std::vector<double> sb = pair_sims(emb_bd, sample.pairs);
  report.sims_clean.assign(sc.begin(), sc.end());
  report.sims_backdoored.assign(sb.begin(), sb.end());

  const nd::MeanVar clean = nd::mean_var(sc);
  const nd::MeanVar bd = nd::mean_var(sb);
  report.mean_clean = clean.mean;
  report.mean_backdoored = bd.mean;
  report.var_clean = clean.var;
  require(clean.var > 0.0, ErrorKind::degenerate,
          "clean similarities have zero variance");
  const double div =
      divisor == ZDivisor::variance ? clean.var : std::sqrt(clean.var);
  report.z = (report.mean_backdoored - report.mean_clean) / div;
  return report;
}

ZScoreReport backdoor_z_score(const model::DualEncoderParams& params,
                              const MatF& images,
                              const attack::PatchSpec& patch, Index n_pairs,
                              nd::Rng& rng, ZDivisor divisor) {
  return backdoor_z_score(
      [&](const MatF& x) { return model::encode_image(params, x); }, images,
      params.dims, patch, n_pairs, rng, divisor);
}

std::vector<AgreementBin> similarity_agreement_curve(
    const EncodeFn& encode, const MatF& images,
    const std::vector<int32_t>& labels, Index n_pairs, int bins, nd::Rng& rng) {
  require(bins >= 1, ErrorKind::argument, "need at least one bin");
  require(Index(labels.size()) == images.rows(), ErrorKind::dimension,
          "one label per image required");
  const PairSample sample = sample_pairs(images.rows(), n_pairs, rng);
  const MatF emb = nd::l2_normalize_rows(MatF(encode(images)));

  std::vector<Index> count(size_t(bins), 0), agree(size_t(bins), 0);
  for (const auto& [i, j] : sample.pairs) {
    const float s = emb.row(i).dot(emb.row(j));
    int b = int(std::floor((double(s) + 1.0) / 2.0 * bins));
    b = std::clamp(b, 0, bins - 1);
    ++count[size_t(b)];
    if (labels[size_t(i)] == labels[size_t(j)]) ++agree[size_t(b)];
  }

  std::vector<AgreementBin> out;
  for (int b = 0; b < bins; ++b) {
    if (count[size_t(b)] == 0) continue;  // empty bins are omitted
    AgreementBin bin;
    bin.similarity = -1.0 + (double(b) + 0.5) * 2.0 / bins;
    bin.p_same = double(agree[size_t(b)]) / double(count[size_t(b)]);
    bin.count = count[size_t(b)];
    out.push_back(bin);
  }
  return out;
}

std::vector<AgreementBin> similarity_agreement_curve(
    const model::DualEncoderParams& params, const MatF& images,
    const std::vector<int32_t>& labels, Index n_pairs, int bins, nd::Rng& rng) {
  return similarity_agreement_curve(
      [&](const MatF& x) { return model::encode_image(params, x); }, images,
      labels, n_pairs, bins, rng);
}

BackdoorSuccess backdoor_attack_success(const model::DualEncoderParams& params,
                                        const ZeroShotHead& head,
                                        const MatF& images,
                                        const attack::PatchSpec& patch,
                                        int target_class, nd::Rng& rng) {
  require(images.rows() > 0, ErrorKind::argument, "no test images");
  require(target_class >= 0 && Index(target_class) < head.n_classes(),
          ErrorKind::argument, "target class outside the head");
  const MatF patched =
      attack::apply_patch_batch(images, params.dims, patch, rng);

  BackdoorSuccess out;
  const std::vector<int> on = zero_shot_classify(head, params, patched);
  const std::vector<int> off = zero_shot_classify(head, params, images);
  out.patched_hits.reserve(on.size());
  out.unpatched_hits.reserve(off.size());
  for (int p : on) out.patched_hits.push_back(p == target_class ? 1 : 0);
  for (int p : off) out.unpatched_hits.push_back(p == target_class ? 1 : 0);
  out.patched_rate = success_fraction(out.patched_hits);
  out.unpatched_rate = success_fraction(out.unpatched_hits);
  return out;
}

}  // namespace cplab::eval
