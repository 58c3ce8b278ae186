// Poison-set construction: trigger patches, caption pools, targeted and
// backdoor poison examples, and injection into a clean corpus.
//
// Every operation is a pure function of its inputs and the rng stream passed
// in, so poison sets rebuild bit-identically from a seed.
#pragma once

#include <string>
#include <vector>

#include "cplab/dataset.hpp"
#include "cplab/rng.hpp"
#include "cplab/types.hpp"

namespace cplab::attack {

// ---- trigger patch ----

enum class Placement { consistent, random };

struct PatchSpec {
  int size = 4;  // p x p pixels
  Placement placement = Placement::consistent;
  // Upper-left corner for consistent placement; random placement draws a
  // uniform valid offset per image (column first, then row).
  int x0 = 0;
  int y0 = 0;
};

// Overlay the checkerboard: within the patch, pixel (row i, col j) is 1.0 on
// all channels when (i+j) is even, else 0.0. Pixels outside are untouched.
ArrF apply_patch(const ArrF& image, const ImageDims& dims,
                 const PatchSpec& patch, nd::Rng& rng);

// Row-wise batch form; random placement draws an independent offset per row,
// in row order.
MatF apply_patch_batch(const MatF& images, const ImageDims& dims,
                       const PatchSpec& patch, nd::Rng& rng);

// ---- caption pools ----

enum class CaptionMode { mined, templates };

struct CaptionSet {
  std::vector<std::string> captions;
  CaptionMode mode = CaptionMode::mined;
  Index size() const { return Index(captions.size()); }
};

// mined: corpus captions containing the class name as a substring, shuffled,
// cycled up to count (no matches is an empty-match error). templates: the
// zero-shot prompt list instantiated for the class, shuffled, cycled — so
// count <= T yields distinct prompts and count == 2T uses each exactly twice.
CaptionSet build_caption_set(const data::Corpus& corpus,
                             const std::string& class_name, CaptionMode mode,
                             Index count, nd::Rng& rng);

// ---- poison sets ----

struct PoisonTarget {
  ArrF image;        // the adversary's chosen x'
  int target_class;  // y'
  std::string class_name;
};

struct EvasionSpec {
  // Per-pixel Gaussian noise added to each poison image copy (clamped back
  // to [0,1]); zero disables perturbation entirely.
  float sigma = 0.01f;
  // When set, appends one word sampled from word_pool to each caption.
  bool append_word = false;
  std::vector<std::string> word_pool;
};

enum class PoisonKind { targeted, backdoor };

struct PoisonSet {
  PoisonKind kind = PoisonKind::targeted;
  ImageDims dims;
  MatF images;  // count x pixels
  std::vector<std::string> captions;
  std::vector<int32_t> labels;  // adversary's target class, audit metadata
  Index size() const { return images.rows(); }
};

// count copies of the target image, each paired with the next caption from
// the pool (cycling unless no_repeat_captions). Per-poison draw order:
// pixel noise first (when sigma > 0), then the appended word.
PoisonSet make_targeted_poisons(const PoisonTarget& target,
                                const ImageDims& dims,
                                const CaptionSet& captions, Index count,
                                const EvasionSpec& evasion,
                                bool no_repeat_captions, nd::Rng& rng);

// count distinct (base image, caption) pairings; poison k uses base k mod B
// and caption (k mod B + k div B) mod C, with the patch stamped per the
// PatchSpec. The diagonal walk keeps all B*C pairs reachable while giving
// every poison a fresh caption whenever count <= min(B, C) -- caption
// diversity is what pushes the association into the image tower.
PoisonSet make_backdoor_poisons(const MatF& base_images, const ImageDims& dims,
                                const PatchSpec& patch,
                                const CaptionSet& captions, int target_class,
                                Index count, nd::Rng& rng);

// Returns the corpus with the poison examples shuffled uniformly into the
// order (clean relative order preserved, clean rows bit-untouched). Poison
// captions are tokenized with the corpus vocabulary; provenance is flagged.
data::Corpus inject(const data::Corpus& corpus, const PoisonSet& poisons,
                    nd::Rng& rng);

}  // namespace cplab::attack
