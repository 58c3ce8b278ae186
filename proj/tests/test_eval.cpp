#include "cplab/eval.hpp"

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "cplab/dataset.hpp"
#include "cplab/error.hpp"
#include "doctest.h"

using cplab::ArrF;
using cplab::Error;
using cplab::ErrorKind;
using cplab::ImageDims;
using cplab::Index;
using cplab::MatF;
using cplab::MatI;
using cplab::attack::PatchSpec;
using cplab::attack::Placement;
using cplab::eval::accuracy;
using cplab::eval::AgreementBin;
using cplab::eval::backdoor_attack_success;
using cplab::eval::backdoor_z_score;
using cplab::eval::build_zero_shot_head;
using cplab::eval::probe_classify_embeddings;
using cplab::eval::ProbeConfig;
using cplab::eval::ProbeHead;
using cplab::eval::similarity_agreement_curve;
using cplab::eval::success_fraction;
using cplab::eval::train_linear_probe;
using cplab::eval::train_probe_embeddings;
using cplab::eval::ZDivisor;
using cplab::eval::zero_shot_classify_embeddings;
using cplab::eval::ZeroShotHead;
using cplab::eval::ZScoreReport;
using cplab::nd::Rng;

namespace {

cplab::data::Corpus tiny_corpus() {
  cplab::data::CorpusSpec spec;
  spec.n_examples = 60;
  spec.n_classes = 6;
  spec.dims = ImageDims{16, 16, 3};
  spec.seed = 19;
  return cplab::data::generate_corpus(spec);
}

cplab::model::DualEncoderParams tiny_params(const cplab::data::Corpus& c) {
  cplab::model::TrainConfig cfg;
  cfg.embed_dim = 16;
  cfg.text_embed_dim = 16;
  return cplab::model::init_params(cfg, c.dims, c.vocab.size(), 33);
}

MatF identity_encode(const MatF& x) { return x; }

}  // namespace

TEST_CASE("zero-shot head rows are unit prompt-embedding averages") {
  const auto corpus = tiny_corpus();
  const auto params = tiny_params(corpus);

  const std::vector<std::string> one_template = {"a photo of a {}"};
  const ZeroShotHead head =
      build_zero_shot_head(params, corpus.vocab, corpus.max_seq_len,
                           corpus.class_names, one_template);
  CHECK(head.n_classes() == Index(corpus.class_names.size()));
  for (Index i = 0; i < head.n_classes(); ++i)
    CHECK(std::abs(head.class_embeds.row(i).norm() - 1.0f) < 1e-5f);

  // A single template collapses the average to that prompt's embedding.
  const auto prompts = cplab::data::zero_shot_prompts(
      {corpus.class_names[2]}, one_template);
  MatI toks(1, corpus.max_seq_len);
  const auto ids =
      cplab::data::tokenize(prompts[0], corpus.vocab, corpus.max_seq_len);
  for (int j = 0; j < corpus.max_seq_len; ++j) toks(0, j) = ids[size_t(j)];
  const MatF g = cplab::model::encode_text(params, toks);
  CHECK((head.class_embeds.row(2) - g.row(0)).cwiseAbs().maxCoeff() < 1e-6f);

  // Reordering class names reorders rows without changing them.
  std::vector<std::string> shuffled = {corpus.class_names[2],
                                       corpus.class_names[0]};
  const ZeroShotHead small = build_zero_shot_head(
      params, corpus.vocab, corpus.max_seq_len, shuffled, one_template);
  CHECK((small.class_embeds.row(0) == head.class_embeds.row(2)));
  CHECK((small.class_embeds.row(1) == head.class_embeds.row(0)));

  CHECK_THROWS_AS(build_zero_shot_head(params, corpus.vocab,
                                       corpus.max_seq_len, corpus.class_names,
                                       {}),
                  Error);
  CHECK_THROWS_AS(build_zero_shot_head(params, corpus.vocab,
                                       corpus.max_seq_len, {}, one_template),
                  Error);
}

TEST_CASE("zero-shot classification picks the nearest class embedding") {
  ZeroShotHead head;
  head.class_names = {"a", "b", "c"};
  head.class_embeds = MatF::Identity(3, 4);

  MatF embeds(4, 4);
  embeds.row(0) << 0.0f, 1.0f, 0.0f, 0.0f;   // class 1 exactly
  embeds.row(1) << 5.0f, 0.0f, 0.0f, 0.0f;   // rescaled class 0
  embeds.row(2) << 0.1f, 0.2f, 0.9f, 0.0f;   // closest to class 2
  embeds.row(3) << 0.7f, 0.7f, 0.0f, 0.0f;   // exact tie -> lowest id
  const auto pred = zero_shot_classify_embeddings(head, embeds);
  CHECK(pred == std::vector<int>{1, 0, 2, 0});

  // Positive rescaling cannot move a prediction.
  const auto scaled = zero_shot_classify_embeddings(head, MatF(embeds * 7.5f));
  CHECK(scaled == pred);
}

TEST_CASE("linear probe fits separable embeddings perfectly") {
  // Three tight one-hot clusters.
  const int per = 30;
  MatF embeds(3 * per, 4);
  std::vector<int32_t> labels;
  Rng rng(5);
  for (int k = 0; k < 3; ++k)
    for (int i = 0; i < per; ++i) {
      ArrF row = ArrF::Zero(4);
      row[k] = 1.0f;
      for (int j = 0; j < 4; ++j) row[j] += 0.05f * rng.normal();
      embeds.row(labels.size()) = row.transpose();
      labels.push_back(k);
    }

  ProbeConfig cfg;
  cfg.batch_size = 16;
  cfg.epochs = 40;
  const ProbeHead head = train_probe_embeddings(embeds, labels, 3, cfg);
  const auto pred = probe_classify_embeddings(head, embeds);
  CHECK(accuracy(pred, labels) == 1.0f);

  // Deterministic in the seed.
  const ProbeHead again = train_probe_embeddings(embeds, labels, 3, cfg);
  CHECK((head.w == again.w));
  CHECK((head.b == again.b));
  ProbeConfig other = cfg;
  other.seed = 77;
  const ProbeHead moved = train_probe_embeddings(embeds, labels, 3, other);
  CHECK((moved.w != head.w));
}

TEST_CASE("probe training demands two classes and valid labels") {
  MatF embeds = MatF::Random(20, 4);
  std::vector<int32_t> same(20, 2);
  ProbeConfig cfg;
  cfg.batch_size = 10;
  try {
    train_probe_embeddings(embeds, same, 5, cfg);
    FAIL("expected a degenerate error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::degenerate);
  }

  std::vector<int32_t> bad(20, 0);
  bad[3] = 9;
  CHECK_THROWS_AS(train_probe_embeddings(embeds, bad, 5, cfg), Error);
}

TEST_CASE("probe training leaves the encoder untouched") {
  const auto corpus = tiny_corpus();
  const auto params = tiny_params(corpus);
  const auto before = params;
  ProbeConfig cfg;
  cfg.batch_size = 16;
  cfg.epochs = 3;
  train_linear_probe(params, corpus.images, corpus.labels,
                     int(corpus.class_names.size()), cfg);
  CHECK(params == before);
}

TEST_CASE("success accounting averages stored booleans") {
  CHECK(success_fraction({1, 0, 1, 0}) == 0.5);
  CHECK(success_fraction({1, 1}) == 1.0);
  CHECK_THROWS_AS(success_fraction({}), Error);
  CHECK(accuracy({1, 2, 3}, {1, 2, 0}) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("a patch-blind encoder scores exactly zero") {
  const ImageDims dims{4, 4, 3};
  PatchSpec patch;
  patch.size = 2;
  Rng img_rng(40);
  MatF images(6, dims.pixels());
  for (Index r = 0; r < images.rows(); ++r)
    for (Index c = 0; c < images.cols(); ++c)
      images(r, c) = img_rng.next_float();

  // Encoder that zeroes the patch region before projecting: clean and
  // patched inputs become identical.
  auto masked = [&](const MatF& x) {
    MatF out = x;
    for (int y = 0; y < patch.size; ++y)
      for (int xx = 0; xx < patch.size; ++xx)
        for (int c = 0; c < dims.channels; ++c)
          out.col(dims.index(y, xx, c)).setZero();
    return out;
  };

  Rng rng(7);
  const ZScoreReport report =
      backdoor_z_score(masked, images, dims, patch, 1000, rng);
  CHECK(report.z == 0.0);
  CHECK(report.mean_backdoored == report.mean_clean);
  CHECK(report.var_clean > 0.0);
}

TEST_CASE("z-score matches a hand-computed four-point oracle") {
  // dims 1x2x3: six pixels; a 1x1 patch at the origin overwrites the first
  // three columns with 1.0 (even parity), so patched embeddings are known
  // in closed form under the identity encoder.
  const ImageDims dims{1, 2, 3};
  MatF images(4, 6);
  images << 0.9f, 0.1f, 0.3f, 0.2f, 0.8f, 0.1f,
            0.2f, 0.7f, 0.6f, 0.9f, 0.1f, 0.4f,
            0.5f, 0.5f, 0.1f, 0.3f, 0.3f, 0.8f,
            0.1f, 0.2f, 0.9f, 0.6f, 0.4f, 0.2f;
  PatchSpec patch;
  patch.size = 1;

  for (ZDivisor mode : {ZDivisor::variance, ZDivisor::stddev}) {
    Rng rng(3);
    const ZScoreReport r =
        backdoor_z_score(identity_encode, images, dims, patch, 1000000, rng,
                         mode);
    CHECK(r.exhaustive);
    CHECK(r.n_pairs == 6);

    // Brute force in double over all pairs.
    auto normalized = [&](bool patched) {
      Eigen::MatrixXd e(4, 6);
      for (Index i = 0; i < 4; ++i)
        for (Index j = 0; j < 6; ++j) {
          double v = double(images(i, j));
          if (patched && j < 3) v = 1.0;
          e(i, j) = v;
        }
      for (Index i = 0; i < 4; ++i) e.row(i) /= e.row(i).norm();
      return e;
    };
    const Eigen::MatrixXd ec = normalized(false), eb = normalized(true);
    double mc = 0, mb = 0;
    std::vector<double> sims;
    for (Index i = 0; i < 4; ++i)
      for (Index j = i + 1; j < 4; ++j) {
        sims.push_back(ec.row(i).dot(ec.row(j)));
        mc += sims.back();
        mb += eb.row(i).dot(eb.row(j));
      }
    mc /= 6.0;
    mb /= 6.0;
    double var = 0;
    for (double s : sims) var += (s - mc) * (s - mc);
    var /= 6.0;
    const double div = mode == ZDivisor::variance ? var : std::sqrt(var);
    const double want = (mb - mc) / div;

    CHECK(std::abs(r.mean_clean - mc) < 1e-6);
    CHECK(std::abs(r.mean_backdoored - mb) < 1e-6);
    CHECK(std::abs(r.var_clean - var) < 1e-6);
    CHECK(std::abs(r.z - want) < 1e-6);
  }
}

TEST_CASE("z-score sampling uses the requested pair budget") {
  const ImageDims dims{1, 2, 3};
  MatF images = MatF::Random(10, 6).cwiseAbs();
  PatchSpec patch;
  patch.size = 1;
  Rng rng(5);
  const ZScoreReport r =
      backdoor_z_score(identity_encode, images, dims, patch, 7, rng);
  CHECK(!r.exhaustive);
  CHECK(r.n_pairs == 7);
  CHECK(r.sims_clean.size() == 7);

  // Identical rng seed reproduces the identical report.
  Rng r1(9), r2(9);
  const auto a = backdoor_z_score(identity_encode, images, dims, patch, 50, r1);
  const auto b = backdoor_z_score(identity_encode, images, dims, patch, 50, r2);
  CHECK(a.z == b.z);
  CHECK(a.sims_clean == b.sims_clean);
}

TEST_CASE("identical images make the z-score degenerate") {
  const ImageDims dims{1, 2, 3};
  MatF images(3, 6);
  for (Index i = 0; i < 3; ++i)
    images.row(i) << 0.4f, 0.3f, 0.2f, 0.8f, 0.1f, 0.5f;
  PatchSpec patch;
  patch.size = 1;
  Rng rng(1);
  try {
    backdoor_z_score(identity_encode, images, dims, patch, 100, rng);
    FAIL("expected a degenerate error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::degenerate);
  }
}

TEST_CASE("quadrupling the pair budget halves the z-score sampling error") {
  const ImageDims dims{2, 2, 2};
  MatF images(64, 8);
  Rng img_rng(77);
  for (Index r = 0; r < images.rows(); ++r)
    for (Index c = 0; c < images.cols(); ++c)
      images(r, c) = img_rng.next_float();
  PatchSpec patch;
  patch.size = 1;

  Rng oracle_rng(0);
  const double truth =
      backdoor_z_score(identity_encode, images, dims, patch, 1 << 30,
                       oracle_rng)
          .z;

  auto mean_abs_err = [&](Index n_pairs) {
    double total = 0.0;
    const int seeds = 40;
    for (int s = 0; s < seeds; ++s) {
      Rng rng(1000 + uint64_t(s));
      const double z =
          backdoor_z_score(identity_encode, images, dims, patch, n_pairs, rng)
              .z;
      total += std::abs(z - truth);
    }
    return total / seeds;
  };

  const double coarse = mean_abs_err(250);
  const double fine = mean_abs_err(1000);
  CHECK(fine < 0.70 * coarse);
  CHECK(coarse > 0.0);
}

TEST_CASE("agreement curve: same-label pairs everywhere give probability 1") {
  MatF images = MatF::Random(12, 6).cwiseAbs();
  std::vector<int32_t> labels(12, 3);
  Rng rng(2);
  const auto curve =
      similarity_agreement_curve(identity_encode, images, labels, 500, 10, rng);
  CHECK(!curve.empty());
  Index total = 0;
  for (const auto& bin : curve) {
    CHECK(bin.p_same == 1.0);
    CHECK(bin.count > 0);
    total += bin.count;
  }
  CHECK(total == 66);  // 12 choose 2: the budget covers all pairs
}

TEST_CASE("agreement curve: independent labels sit near chance") {
  MatF images(400, 8);
  std::vector<int32_t> labels;
  Rng rng(21);
  for (Index r = 0; r < images.rows(); ++r) {
    for (Index c = 0; c < images.cols(); ++c)
      images(r, c) = rng.normal();  // random directions on the sphere
    labels.push_back(int32_t(rng.below(4)));
  }
  Rng curve_rng(3);
  const auto curve = similarity_agreement_curve(identity_encode, images,
                                                labels, 20000, 10, curve_rng);
  for (const auto& bin : curve)
    if (bin.count >= 200) CHECK(std::abs(bin.p_same - 0.25) < 0.12);
}

TEST_CASE("backdoor success rates are bounded means of stored hits") {
  const auto corpus = tiny_corpus();
  const auto params = tiny_params(corpus);
  const ZeroShotHead head = build_zero_shot_head(
      params, corpus.vocab, corpus.max_seq_len, corpus.class_names,
      cplab::data::zero_shot_templates());
  PatchSpec patch;
  Rng rng(6);
  const auto out = backdoor_attack_success(params, head, corpus.images, patch,
                                           2, rng);
  CHECK(out.patched_hits.size() == size_t(corpus.size()));
  CHECK(out.unpatched_hits.size() == size_t(corpus.size()));
  CHECK(out.patched_rate >= 0.0);
  CHECK(out.patched_rate <= 1.0);
  CHECK(out.patched_rate == success_fraction(out.patched_hits));
  CHECK(out.unpatched_rate == success_fraction(out.unpatched_hits));

  Rng rng2(6);
  CHECK_THROWS_AS(backdoor_attack_success(params, head, corpus.images, patch,
                                          99, rng2),
                  Error);
}
