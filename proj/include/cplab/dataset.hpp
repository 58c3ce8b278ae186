// Procedural captioned-image corpus: rendered colored shapes over noisy gray
// backgrounds, templated captions, a fixed word vocabulary, deterministic
// splits, and a documented binary on-disk format.
//
// Corpus storage is struct-of-arrays: one row-major float matrix of images
// (row i = image i, pixel layout per ImageDims), one integer matrix of token
// ids, and parallel vectors for raw captions, labels, and provenance. Labels
// and provenance are generation metadata for evaluation/audit only — the
// trainer never reads them.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "cplab/rng.hpp"
#include "cplab/types.hpp"

namespace cplab::data {

// ---- vocabulary & tokenization ----

struct Vocab {
  static constexpr int32_t kPad = 0;
  static constexpr int32_t kUnk = 1;

  std::vector<std::string> words;  // id -> word; [0], [1] reserved
  std::unordered_map<std::string, int32_t> ids;

  int32_t id_of(const std::string& word) const;
  Index size() const { return Index(words.size()); }
  bool operator==(const Vocab& o) const { return words == o.words; }

  // Deterministic: unique words of `texts`, sorted, after the reserved ids.
  static Vocab build(const std::vector<std::string>& texts);
};

// Lowercases and splits on every non-alphanumeric byte.
std::vector<std::string> split_words(const std::string& text);

// Fixed-length id sequence: truncated or PAD-filled to max_seq_len; words
// missing from the vocabulary map to UNK.
std::vector<int32_t> tokenize(const std::string& text, const Vocab& vocab,
                              int max_seq_len);

// Space-joined words, PAD dropped.
std::string detokenize(const std::vector<int32_t>& tokens, const Vocab& vocab);

// ---- fixed domain tables ----

// Class id -> shape name; generation uses the first n_classes entries.
extern const std::array<const char*, 10> kShapeNames;

struct NamedColor {
  const char* name;
  float rgb[3];
};
extern const std::array<NamedColor, 8> kColors;

// Caption patterns used for corpus generation; placeholders {class}, {color},
// {size} are substituted per example. Every pattern names the class.
const std::vector<std::string>& caption_patterns();

// The 80 zero-shot prompt templates; "{}" marks the class-name slot. The
// exact list is mirrored line-for-line in docs/zero_shot_templates.txt.
const std::vector<std::string>& zero_shot_templates();

// One prompt per (class, template) pair, class-major order; a template
// without the "{}" placeholder is a template error.
std::vector<std::string> zero_shot_prompts(
    const std::vector<std::string>& class_names,
    const std::vector<std::string>& templates);

// ---- corpus generation ----

struct CorpusSpec {
  Index n_examples = 10000;
  int n_classes = 10;
  ImageDims dims{32, 32, 3};
  int max_seq_len = 12;
  // Background: per-image gray base in [0.25, 0.55] plus per-pixel Gaussian
  // speckle of this sigma, clamped to [0,1].
  float noise_level = 0.04f;
  // Shape radius as a fraction of min(height, width).
  float min_scale = 0.30f;
  float max_scale = 0.46f;
  std::vector<std::string> caption_patterns_;  // empty -> caption_patterns()
  uint64_t seed = 0;

  bool operator==(const CorpusSpec&) const = default;
};

struct Corpus {
  ImageDims dims;
  int max_seq_len = 0;
  MatF images;  // n x pixels, values in [0,1]
  MatI tokens;  // n x max_seq_len
  std::vector<std::string> captions;
  std::vector<int32_t> labels;
  std::vector<uint8_t> provenance;  // 0 = clean, 1 = poison
  std::vector<std::string> class_names;
  Vocab vocab;

  Index size() const { return images.rows(); }
  bool operator==(const Corpus& o) const;  // bit-exact on all fields
};

// Pure function of the spec; example i's class is i mod n_classes and its
// randomness comes from a child stream keyed on i, so generation order (or
// parallel generation) cannot change the result.
Corpus generate_corpus(const CorpusSpec& spec);

// Exposed for direct pixel tests. Renders one shape with 3x3 supersampled
// coverage blended over the noisy background; consumes height*width normal
// draws from rng for the speckle.
ArrF render_shape(const ImageDims& dims, int shape_id, const float rgb[3],
                  float cx, float cy, float radius, float bg_base,
                  float noise_sigma, nd::Rng& rng);

// ---- splits ----

struct SplitIndices {
  std::vector<Index> train, probe, test;
};

// Disjoint, exhaustive, deterministic in seed. Boundaries are rounded
// cumulative fractions, so (0.8, 0.1, 0.1) over 1000 gives 800/100/100.
SplitIndices split(Index n, const std::array<double, 3>& fractions,
                   uint64_t seed);

// Materializes the sub-corpus at the given row indices, in order.
Corpus select(const Corpus& corpus, const std::vector<Index>& rows);

// ---- persistence ----
//
// A corpus directory holds manifest.json plus raw little-endian blobs:
//   images.f32      n*pixels float32
//   tokens.u32      n*max_seq_len uint32
//   labels.u32      n uint32
//   provenance.u8   n bytes
//   captions.txt    one caption per line
// The manifest records dims, counts, class names, vocabulary, and an FNV-1a
// 64 checksum per blob. load(save(x)) == x bit-exactly.

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);

// Checksum over image/token/label/provenance blob contents (as written to
// disk); recorded into checkpoints to tie a model to its training data.
uint64_t corpus_checksum(const Corpus& corpus);

}  // namespace cplab::data
