#include "cplab/attack.hpp"

#include <algorithm>
#include <cstdio>

#include "cplab/error.hpp"

namespace cplab::attack {

namespace {

void check_patch_fits(const ImageDims& dims, const PatchSpec& patch) {
  require(patch.size >= 1, ErrorKind::argument, "patch size must be >= 1");
  require(patch.size <= dims.width && patch.size <= dims.height,
          ErrorKind::argument, "patch does not fit inside the image");
}

// Stamps the checkerboard into one image row at (x0, y0).
void stamp(float* row, const ImageDims& dims, int x0, int y0, int size) {
  for (int i = 0; i < size; ++i) {
    for (int j = 0; j < size; ++j) {
      const float v = ((i + j) % 2 == 0) ? 1.0f : 0.0f;
      float* px = row + dims.index(y0 + i, x0 + j, 0);
      for (int c = 0; c < dims.channels; ++c) px[c] = v;
    }
  }
}

// Resolves the offset for one image, consuming rng only in random mode
// (column draw first, then row).
void stamp_placed(float* row, const ImageDims& dims, const PatchSpec& patch,
                  nd::Rng& rng) {
  int x0 = patch.x0;
  int y0 = patch.y0;
  if (patch.placement == Placement::random) {
    x0 = int(rng.below(dims.width - patch.size + 1));
    y0 = int(rng.below(dims.height - patch.size + 1));
  } else {
    require(x0 >= 0 && y0 >= 0 && x0 + patch.size <= dims.width &&
                y0 + patch.size <= dims.height,
            ErrorKind::argument, "patch offset places it outside the image");
  }
  stamp(row, dims, x0, y0, patch.size);
}

}  // namespace

ArrF apply_patch(const ArrF& image, const ImageDims& dims,
                 const PatchSpec& patch, nd::Rng& rng) {
  require(image.size() == dims.pixels(), ErrorKind::dimension,
          "image length does not match dims");
  check_patch_fits(dims, patch);
  ArrF out = image;
  stamp_placed(out.data(), dims, patch, rng);
  return out;
}

MatF apply_patch_batch(const MatF& images, const ImageDims& dims,
                       const PatchSpec& patch, nd::Rng& rng) {
  require(images.cols() == dims.pixels(), ErrorKind::dimension,
          "image row length does not match dims");
  check_patch_fits(dims, patch);
  MatF out = images;
  for (Index r = 0; r < out.rows(); ++r)
    stamp_placed(out.row(r).data(), dims, patch, rng);
  return out;
}

CaptionSet build_caption_set(const data::Corpus& corpus,
                             const std::string& class_name, CaptionMode mode,
                             Index count, nd::Rng& rng) {
  require(count >= 1, ErrorKind::argument, "caption count must be >= 1");
  require(!class_name.empty(), ErrorKind::argument, "class name is empty");

  std::vector<std::string> pool;
  if (mode == CaptionMode::mined) {
    for (const auto& c : corpus.captions)
      if (c.find(class_name) != std::string::npos) pool.push_back(c);
    if (pool.empty())
      fail(ErrorKind::empty_match,
           "no corpus caption mentions \"" + class_name + "\"");
  } else {
    pool = data::zero_shot_prompts({class_name}, data::zero_shot_templates());
  }

  const Index m = Index(pool.size());
  const std::vector<Index> perm = rng.permutation(m);
  CaptionSet out;
  out.mode = mode;
  out.captions.reserve(size_t(count));
  for (Index i = 0; i < count; ++i)
    out.captions.push_back(pool[size_t(perm[size_t(i % m)])]);
  return out;
}

PoisonSet make_targeted_poisons(const PoisonTarget& target,
                                const ImageDims& dims,
                                const CaptionSet& captions, Index count,
                                const EvasionSpec& evasion,
                                bool no_repeat_captions, nd::Rng& rng) {
  require(target.image.size() == dims.pixels(), ErrorKind::dimension,
          "target image length does not match dims");
  require(count >= 1, ErrorKind::argument, "poison count must be >= 1");
  require(captions.size() > 0, ErrorKind::argument, "caption set is empty");
  require(evasion.sigma >= 0.0f, ErrorKind::argument,
          "evasion sigma must be >= 0");
  require(!evasion.append_word || !evasion.word_pool.empty(),
          ErrorKind::argument, "word append enabled with an empty word pool");
  if (no_repeat_captions && count > captions.size()) {
    char buf[128];
    std::snprintf(buf, sizeof buf,
                  "%lld poisons need %lld distinct captions but only %lld "
                  "are available",
                  (long long)count, (long long)count,
                  (long long)captions.size());
    fail(ErrorKind::argument, buf);
  }

  PoisonSet out;
  out.kind = PoisonKind::targeted;
  out.dims = dims;
  out.images.resize(count, dims.pixels());
  out.captions.reserve(size_t(count));
  out.labels.assign(size_t(count), int32_t(target.target_class));
  for (Index i = 0; i < count; ++i) {
    ArrF img = target.image;
    if (evasion.sigma > 0.0f) {
      for (Index p = 0; p < img.size(); ++p)
        img[p] = std::clamp(img[p] + evasion.sigma * rng.normal(), 0.0f, 1.0f);
    }
    out.images.row(i) = img.transpose();
    std::string cap = captions.captions[size_t(i % captions.size())];
    if (evasion.append_word) {
      const auto& pool = evasion.word_pool;
      cap += " " + pool[size_t(rng.below(Index(pool.size())))];
    }
    out.captions.push_back(std::move(cap));
  }
  return out;
}

PoisonSet make_backdoor_poisons(const MatF& base_images, const ImageDims& dims,
                                const PatchSpec& patch,
                                const CaptionSet& captions, int target_class,
                                Index count, nd::Rng& rng) {
  require(base_images.rows() > 0, ErrorKind::argument,
          "backdoor poisons need at least one base image");
  require(base_images.cols() == dims.pixels(), ErrorKind::dimension,
          "base image row length does not match dims");
  require(captions.size() > 0, ErrorKind::argument, "caption set is empty");
  require(count >= 1, ErrorKind::argument, "poison count must be >= 1");
  check_patch_fits(dims, patch);
  const Index b = base_images.rows();
  const Index c = captions.size();
  if (count > b * c) {
    char buf[128];
    std::snprintf(buf, sizeof buf,
                  "%lld poisons exceed the %lld distinct image-caption "
                  "pairings available",
                  (long long)count, (long long)(b * c));
    fail(ErrorKind::argument, buf);
  }

  PoisonSet out;
  out.kind = PoisonKind::backdoor;
  out.dims = dims;
  out.images.resize(count, dims.pixels());
  out.captions.reserve(size_t(count));
  out.labels.assign(size_t(count), int32_t(target_class));
  for (Index k = 0; k < count; ++k) {
    out.images.row(k) = base_images.row(k % b);
    stamp_placed(out.images.row(k).data(), dims, patch, rng);
    // Same base => different k/b, so the shifted caption index still differs:
    // all count <= b*c pairs stay distinct, and the first min(b, c) poisons
    // each get an unshared caption.
    out.captions.push_back(captions.captions[size_t((k % b + k / b) % c)]);
  }
  return out;
}

data::Corpus inject(const data::Corpus& corpus, const PoisonSet& poisons,
                    nd::Rng& rng) {
  require(poisons.dims == corpus.dims, ErrorKind::format,
          "poison image dims do not match the corpus");
  const Index n = corpus.size();
  const Index p = poisons.size();
  if (p == 0) return corpus;

  const Index total = n + p;
  // A uniform riffle: sample the set of poison positions, then keep both
  // streams in their own order (slots sorted so poison i precedes poison i+1).
  std::vector<Index> slots = rng.sample_without_replacement(total, p);
  std::sort(slots.begin(), slots.end());
  std::vector<Index> poison_at(size_t(total), Index(-1));
  for (Index i = 0; i < p; ++i) poison_at[size_t(slots[size_t(i)])] = i;

  data::Corpus out;
  out.dims = corpus.dims;
  out.max_seq_len = corpus.max_seq_len;
  out.class_names = corpus.class_names;
  out.vocab = corpus.vocab;
  out.images.resize(total, corpus.images.cols());
  out.tokens.resize(total, corpus.tokens.cols());
  out.captions.reserve(size_t(total));
  out.labels.reserve(size_t(total));
  out.provenance.reserve(size_t(total));

  Index clean = 0;
  for (Index r = 0; r < total; ++r) {
    const Index i = poison_at[size_t(r)];
    if (i >= 0) {
      out.images.row(r) = poisons.images.row(i);
      const auto toks = data::tokenize(poisons.captions[size_t(i)],
                                       corpus.vocab, corpus.max_seq_len);
      for (Index t = 0; t < out.tokens.cols(); ++t)
        out.tokens(r, t) = toks[size_t(t)];
      out.captions.push_back(poisons.captions[size_t(i)]);
      out.labels.push_back(poisons.labels[size_t(i)]);
      out.provenance.push_back(1);
    } else {
      out.images.row(r) = corpus.images.row(clean);
      out.tokens.row(r) = corpus.tokens.row(clean);
      out.captions.push_back(corpus.captions[size_t(clean)]);
      out.labels.push_back(corpus.labels[size_t(clean)]);
      out.provenance.push_back(corpus.provenance[size_t(clean)]);
      ++clean;
    }
  }
  return out;
}

}  // namespace cplab::attack
