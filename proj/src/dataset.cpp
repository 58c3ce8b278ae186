#include "cplab/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <utility>

#include "cplab/error.hpp"
#include "cplab/serialize.hpp"
#include "json.hpp"

#include "jsonio.hpp"

namespace cplab::data {

using nlohmann::json;
using io::blob_entry;
using io::get_field;

// ---- vocabulary & tokenization ----

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (c >= 'A' && c <= 'Z') c = static_cast<unsigned char>(c - 'A' + 'a');
    bool word_char = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9');
    if (word_char) {
      cur.push_back(char(c));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

int32_t Vocab::id_of(const std::string& word) const {
  auto it = ids.find(word);
  return it == ids.end() ? kUnk : it->second;
}

Vocab Vocab::build(const std::vector<std::string>& texts) {
  std::set<std::string> uniq;
  for (const std::string& t : texts)
    for (std::string& w : split_words(t)) uniq.insert(std::move(w));
  Vocab v;
  v.words = {"<pad>", "<unk>"};
  v.words.insert(v.words.end(), uniq.begin(), uniq.end());
  for (size_t i = 0; i < v.words.size(); ++i)
    v.ids.emplace(v.words[i], int32_t(i));
  return v;
}

std::vector<int32_t> tokenize(const std::string& text, const Vocab& vocab,
                              int max_seq_len) {
  require(max_seq_len > 0, ErrorKind::argument,
          "tokenize: max_seq_len must be positive");
  std::vector<int32_t> out(size_t(max_seq_len), Vocab::kPad);
  std::vector<std::string> words = split_words(text);
  size_t n = std::min(words.size(), size_t(max_seq_len));
  for (size_t i = 0; i < n; ++i) out[i] = vocab.id_of(words[i]);
  return out;
}

std::string detokenize(const std::vector<int32_t>& tokens, const Vocab& vocab) {
  std::string out;
  for (int32_t t : tokens) {
    if (t == Vocab::kPad) continue;
    require(t >= 0 && t < vocab.size(), ErrorKind::argument,
            "detokenize: token id out of range");
    if (!out.empty()) out.push_back(' ');
    out += vocab.words[size_t(t)];
  }
  return out;
}

// ---- fixed domain tables ----

const std::array<const char*, 10> kShapeNames = {
    "circle", "ring",  "square",  "frame", "diamond",
    "triangle", "cross", "saltire", "plank", "pillar"};

const std::array<NamedColor, 8> kColors = {{
    {"red", {0.90f, 0.15f, 0.15f}},
    {"green", {0.15f, 0.80f, 0.15f}},
    {"blue", {0.20f, 0.30f, 0.95f}},
    {"yellow", {0.95f, 0.90f, 0.20f}},
    {"orange", {0.95f, 0.55f, 0.10f}},
    {"purple", {0.60f, 0.20f, 0.80f}},
    {"cyan", {0.15f, 0.85f, 0.90f}},
    {"white", {0.95f, 0.95f, 0.95f}},
}};

namespace {
const std::array<const char*, 5> kSizeWords = {"tiny", "small", "medium",
                                               "large", "big"};

std::string size_word(float scale, float lo, float hi) {
  float t = hi > lo ? (scale - lo) / (hi - lo) : 0.5f;
  int idx = std::min(4, std::max(0, int(t * 5.0f)));
  return kSizeWords[size_t(idx)];
}

void replace_all(std::string& s, const std::string& from,
                 const std::string& to) {
  for (size_t pos = 0; (pos = s.find(from, pos)) != std::string::npos;
       pos += to.size())
    s.replace(pos, from.size(), to);
}
}  // namespace

const std::vector<std::string>& caption_patterns() {
  static const std::vector<std::string> patterns = {
      "a photo of a {color} {class}",
      "an image of a {color} {class}",
      "a {size} {color} {class} on a noisy background",
      "the {color} {class} in this picture",
      "a picture of a {size} {class}",
      "a {color} {class} over a gray backdrop",
      "this photo shows a {size} {color} {class}",
      "a simple {class} drawn in {color}",
      "one {size} {class} in the frame",
      "a noisy photo of a {color} {class}",
      "the {class} here is {color} and {size}",
      "a {class} rendered at low resolution",
  };
  return patterns;
}

const std::vector<std::string>& zero_shot_templates() {
  static const std::vector<std::string> templates = {
      "a photo of a {}",
      "a blurry photo of a {}",
      "a black and white photo of a {}",
      "a low contrast photo of a {}",
      "a high contrast photo of a {}",
      "a bad photo of a {}",
      "a good photo of a {}",
      "a small photo of a {}",
      "a big photo of a {}",
      "a photo of a small {}",
      "a photo of a big {}",
      "a photo of the {}",
      "a blurry photo of the {}",
      "a black and white photo of the {}",
      "a low contrast photo of the {}",
      "a high contrast photo of the {}",
      "a bad photo of the {}",
      "a good photo of the {}",
      "a small photo of the {}",
      "a big photo of the {}",
      "a photo of the small {}",
      "a photo of the big {}",
      "a photo of one {}",
      "a photo of many {}",
      "a picture of a {}",
      "a picture of the {}",
      "a drawing of a {}",
      "a drawing of the {}",
      "a painting of a {}",
      "a painting of the {}",
      "a sketch of a {}",
      "a sketch of the {}",
      "a rendering of a {}",
      "a rendering of the {}",
      "an illustration of a {}",
      "an illustration of the {}",
      "a cropped photo of a {}",
      "a cropped photo of the {}",
      "a close up photo of a {}",
      "a close up photo of the {}",
      "a bright photo of a {}",
      "a bright photo of the {}",
      "a dark photo of a {}",
      "a dark photo of the {}",
      "a pixelated photo of a {}",
      "a pixelated photo of the {}",
      "a grainy photo of a {}",
      "a grainy photo of the {}",
      "a centered photo of a {}",
      "a centered photo of the {}",
      "a photo of a clean {}",
      "a photo of a dirty {}",
      "a photo of a nice {}",
      "a photo of a weird {}",
      "a photo of a large {}",
      "a photo of a tiny {}",
      "a photo of my {}",
      "a photo of your {}",
      "an image of a {}",
      "an image of the {}",
      "a snapshot of a {}",
      "a snapshot of the {}",
      "there is a {} in the scene",
      "there is the {} in the scene",
      "this is a {} in the scene",
      "this is the {} in the scene",
      "this is one {} in the scene",
      "a {} on a plain background",
      "the {} on a plain background",
      "a {} in a simple scene",
      "the {} in a simple scene",
      "a {} isolated on gray",
      "the {} isolated on gray",
      "a shape that looks like a {}",
      "a figure shaped like a {}",
      "an icon of a {}",
      "the icon of a {}",
      "a symbol shaped like a {}",
      "a plain {} in the middle",
      "one {} in the middle of the image",
  };
  return templates;
}

std::vector<std::string> zero_shot_prompts(
    const std::vector<std::string>& class_names,
    const std::vector<std::string>& templates) {
  require(!class_names.empty(), ErrorKind::argument,
          "zero_shot_prompts: no class names");
  require(!templates.empty(), ErrorKind::argument,
          "zero_shot_prompts: no templates");
  std::vector<std::string> out;
  out.reserve(class_names.size() * templates.size());
  for (const std::string& name : class_names)
    for (const std::string& tpl : templates) {
      size_t pos = tpl.find("{}");
      require(pos != std::string::npos, ErrorKind::template_,
              "zero_shot_prompts: template missing {} placeholder: " + tpl);
      std::string s = tpl;
      s.replace(pos, 2, name);
      out.push_back(std::move(s));
    }
  return out;
}

// ---- rendering ----

namespace {
// Coordinates in units of the shape radius; bounding box is |u|,|v| <= 1.
bool inside_shape(int shape_id, float u, float v) {
  float au = std::abs(u), av = std::abs(v);
  switch (shape_id) {
    case 0:  // circle
      return u * u + v * v <= 1.0f;
    case 1: {  // ring
      float d2 = u * u + v * v;
      return d2 <= 1.0f && d2 >= 0.3025f;  // inner radius 0.55
    }
    case 2:  // square
      return std::max(au, av) <= 0.78f;
    case 3: {  // frame
      float m = std::max(au, av);
      return m <= 0.78f && m >= 0.45f;
    }
    case 4:  // diamond
      return au + av <= 1.0f;
    case 5:  // triangle, apex up: vertices (0,-1), (+-0.95, 0.7)
      return v <= 0.7f && v >= 1.7894737f * au - 1.0f;
    case 6:  // cross (plus sign)
      return (au <= 0.32f && av <= 1.0f) || (av <= 0.32f && au <= 1.0f);
    case 7: {  // saltire: the cross rotated 45 degrees
      float a = 0.70710678f * (u + v), b = 0.70710678f * (u - v);
      float aa = std::abs(a), ab = std::abs(b);
      return (aa <= 0.32f && ab <= 1.0f) || (ab <= 0.32f && aa <= 1.0f);
    }
    case 8:  // plank (horizontal bar)
      return av <= 0.38f && au <= 1.0f;
    case 9:  // pillar (vertical bar)
      return au <= 0.38f && av <= 1.0f;
    default:
      fail(ErrorKind::argument, "unknown shape id");
  }
}
}  // namespace

ArrF render_shape(const ImageDims& dims, int shape_id, const float rgb[3],
                  float cx, float cy, float radius, float bg_base,
                  float noise_sigma, nd::Rng& rng) {
  require(shape_id >= 0 && size_t(shape_id) < kShapeNames.size(),
          ErrorKind::argument, "render_shape: unknown shape id");
  require(radius > 0.0f, ErrorKind::argument,
          "render_shape: radius must be positive");
  require(cx - radius >= 0.0f && cx + radius <= float(dims.width) &&
              cy - radius >= 0.0f && cy + radius <= float(dims.height),
          ErrorKind::spec, "render_shape: shape bounding box leaves the canvas");

  ArrF img(dims.pixels());
  for (int y = 0; y < dims.height; ++y) {
    for (int x = 0; x < dims.width; ++x) {
      int hits = 0;
      for (int sy = 0; sy < 3; ++sy)
        for (int sx = 0; sx < 3; ++sx) {
          float px = float(x) + (float(sx) + 0.5f) / 3.0f;
          float py = float(y) + (float(sy) + 0.5f) / 3.0f;
          float u = (px - cx) / radius;
          float v = (py - cy) / radius;
          if (std::abs(u) <= 1.0f && std::abs(v) <= 1.0f &&
              inside_shape(shape_id, u, v))
            ++hits;
        }
      float cover = float(hits) / 9.0f;
      float base =
          std::clamp(bg_base + noise_sigma * rng.normal(), 0.0f, 1.0f);
      Index at = (Index(y) * dims.width + x) * dims.channels;
      for (int c = 0; c < dims.channels; ++c)
        img[at + c] = std::clamp(base + (rgb[c] - base) * cover, 0.0f, 1.0f);
    }
  }
  return img;
}

// ---- corpus generation ----

namespace {
void validate_spec(const CorpusSpec& spec) {
  require(spec.n_classes >= 1 && size_t(spec.n_classes) <= kShapeNames.size(),
          ErrorKind::argument, "corpus spec: n_classes out of range");
  require(spec.n_examples >= spec.n_classes, ErrorKind::argument,
          "corpus spec: need at least one example per class");
  require(spec.dims.height > 0 && spec.dims.width > 0 &&
              spec.dims.channels == 3,
          ErrorKind::argument, "corpus spec: dims must be H x W x 3");
  require(spec.max_seq_len >= 4, ErrorKind::argument,
          "corpus spec: max_seq_len too small for the caption patterns");
  require(spec.noise_level >= 0.0f, ErrorKind::argument,
          "corpus spec: negative noise level");
  require(spec.min_scale > 0.0f && spec.min_scale <= spec.max_scale,
          ErrorKind::argument, "corpus spec: bad scale range");
  float side = float(std::min(spec.dims.height, spec.dims.width));
  float rmax = spec.max_scale * side;
  require(2.0f * rmax + 1.0f < side, ErrorKind::spec,
          "corpus spec: object larger than canvas (max_scale " +
              std::to_string(spec.max_scale) + " cannot fit with margins)");
}
}  // namespace

Corpus generate_corpus(const CorpusSpec& spec) {
  validate_spec(spec);
  const std::vector<std::string>& patterns =
      spec.caption_patterns_.empty() ? caption_patterns()
                                     : spec.caption_patterns_;
  for (const std::string& p : patterns)
    require(p.find("{class}") != std::string::npos, ErrorKind::template_,
            "caption pattern missing {class} placeholder: " + p);

  Corpus c;
  c.dims = spec.dims;
  c.max_seq_len = spec.max_seq_len;
  for (int k = 0; k < spec.n_classes; ++k)
    c.class_names.push_back(kShapeNames[size_t(k)]);

  // Vocabulary: fixed words of the caption patterns and prompt templates,
  // plus every class/color/size word the generator can substitute.
  std::vector<std::string> vocab_texts;
  for (std::string p : patterns) {
    replace_all(p, "{class}", " ");
    replace_all(p, "{color}", " ");
    replace_all(p, "{size}", " ");
    vocab_texts.push_back(std::move(p));
  }
  for (std::string t : zero_shot_templates()) {
    replace_all(t, "{}", " ");
    vocab_texts.push_back(std::move(t));
  }
  for (const std::string& name : c.class_names) vocab_texts.push_back(name);
  for (const NamedColor& col : kColors) vocab_texts.push_back(col.name);
  for (const char* s : kSizeWords) vocab_texts.push_back(s);
  c.vocab = Vocab::build(vocab_texts);

  const Index n = spec.n_examples;
  const float side = float(std::min(spec.dims.height, spec.dims.width));
  c.images.resize(n, spec.dims.pixels());
  c.tokens.resize(n, spec.max_seq_len);
  c.captions.resize(size_t(n));
  c.labels.resize(size_t(n));
  c.provenance.assign(size_t(n), 0);

  nd::Rng root = nd::Rng(spec.seed).child("corpus");
  for (Index i = 0; i < n; ++i) {
    int cls = int(i % spec.n_classes);
    nd::Rng rng = root.child("example-" + std::to_string(i));

    const NamedColor& col = kColors[size_t(rng.below(kColors.size()))];
    float rgb[3];
    for (int ch = 0; ch < 3; ++ch)
      rgb[ch] =
          std::clamp(col.rgb[ch] + rng.uniform(-0.05f, 0.05f), 0.0f, 1.0f);

    float scale = rng.uniform(spec.min_scale, spec.max_scale);
    float radius = scale * side;
    float lo_x = radius + 0.5f, hi_x = float(spec.dims.width) - radius - 0.5f;
    float lo_y = radius + 0.5f, hi_y = float(spec.dims.height) - radius - 0.5f;
    float cx = rng.uniform(lo_x, hi_x);
    float cy = rng.uniform(lo_y, hi_y);
    float bg = rng.uniform(0.25f, 0.55f);

    ArrF img = render_shape(spec.dims, cls, rgb, cx, cy, radius, bg,
                            spec.noise_level, rng);
    c.images.row(i) = img.matrix().transpose();

    std::string caption = patterns[size_t(rng.below(patterns.size()))];
    replace_all(caption, "{class}", c.class_names[size_t(cls)]);
    replace_all(caption, "{color}", col.name);
    replace_all(caption, "{size}",
                size_word(scale, spec.min_scale, spec.max_scale));
    std::vector<int32_t> toks = tokenize(caption, c.vocab, spec.max_seq_len);
    for (int j = 0; j < spec.max_seq_len; ++j) c.tokens(i, j) = toks[size_t(j)];
    c.captions[size_t(i)] = std::move(caption);
    c.labels[size_t(i)] = cls;
  }
  return c;
}

// ---- splits ----

SplitIndices split(Index n, const std::array<double, 3>& fractions,
                   uint64_t seed) {
  double sum = 0.0;
  for (double f : fractions) {
    require(f > 0.0 && f < 1.0, ErrorKind::argument,
            "split: every fraction must lie in (0,1)");
    sum += f;
  }
  require(std::abs(sum - 1.0) < 1e-9, ErrorKind::argument,
          "split: fractions must sum to 1");
  require(n >= 0, ErrorKind::argument, "split: negative size");

  std::vector<Index> perm = nd::Rng(seed).child("split").permutation(n);
  Index b1 = Index(std::llround(fractions[0] * double(n)));
  Index b2 = Index(std::llround((fractions[0] + fractions[1]) * double(n)));
  b1 = std::clamp<Index>(b1, 0, n);
  b2 = std::clamp<Index>(b2, b1, n);

  SplitIndices s;
  s.train.assign(perm.begin(), perm.begin() + b1);
  s.probe.assign(perm.begin() + b1, perm.begin() + b2);
  s.test.assign(perm.begin() + b2, perm.end());
  return s;
}

Corpus select(const Corpus& corpus, const std::vector<Index>& rows) {
  Corpus out;
  out.dims = corpus.dims;
  out.max_seq_len = corpus.max_seq_len;
  out.class_names = corpus.class_names;
  out.vocab = corpus.vocab;
  const Index m = Index(rows.size());
  out.images.resize(m, corpus.images.cols());
  out.tokens.resize(m, corpus.tokens.cols());
  out.captions.resize(size_t(m));
  out.labels.resize(size_t(m));
  out.provenance.resize(size_t(m));
  for (Index i = 0; i < m; ++i) {
    Index r = rows[size_t(i)];
    require(r >= 0 && r < corpus.size(), ErrorKind::argument,
            "select: row index out of range");
    out.images.row(i) = corpus.images.row(r);
    out.tokens.row(i) = corpus.tokens.row(r);
    out.captions[size_t(i)] = corpus.captions[size_t(r)];
    out.labels[size_t(i)] = corpus.labels[size_t(r)];
    out.provenance[size_t(i)] = corpus.provenance[size_t(r)];
  }
  return out;
}

// ---- equality ----

bool Corpus::operator==(const Corpus& o) const {
  if (!(dims == o.dims) || max_seq_len != o.max_seq_len ||
      images.rows() != o.images.rows() || images.cols() != o.images.cols() ||
      tokens.cols() != o.tokens.cols())
    return false;
  if (std::memcmp(images.data(), o.images.data(),
                  size_t(images.size()) * sizeof(float)) != 0)
    return false;
  if (std::memcmp(tokens.data(), o.tokens.data(),
                  size_t(tokens.size()) * sizeof(int32_t)) != 0)
    return false;
  return captions == o.captions && labels == o.labels &&
         provenance == o.provenance && class_names == o.class_names &&
         vocab == o.vocab;
}

// ---- persistence ----

namespace {

struct CorpusBlobs {
  std::string images, tokens, labels, provenance, captions;
};

CorpusBlobs build_blobs(const Corpus& c) {
  CorpusBlobs b;
  b.images = io::pack_values(c.images.data(), size_t(c.images.size()));
  b.tokens.reserve(size_t(c.tokens.size()) * 4);
  for (Index i = 0; i < c.tokens.rows(); ++i)
    for (Index j = 0; j < c.tokens.cols(); ++j) {
      int32_t t = c.tokens(i, j);
      require(t >= 0, ErrorKind::format, "corpus: negative token id");
      io::append_le(b.tokens, uint32_t(t));
    }
  for (int32_t l : c.labels) {
    require(l >= 0, ErrorKind::format, "corpus: negative label");
    io::append_le(b.labels, uint32_t(l));
  }
  b.provenance.assign(c.provenance.begin(), c.provenance.end());
  for (const std::string& cap : c.captions) {
    require(cap.find('\n') == std::string::npos, ErrorKind::format,
            "corpus: caption contains a newline");
    b.captions += cap;
    b.captions.push_back('\n');
  }
  return b;
}

std::string load_blob(const std::filesystem::path& dir, const json& blobs,
                      const std::string& name) {
  return io::load_checked_blob(dir, blobs, name, "corpus");
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  require(Index(corpus.captions.size()) == corpus.size() &&
              Index(corpus.labels.size()) == corpus.size() &&
              Index(corpus.provenance.size()) == corpus.size(),
          ErrorKind::format, "corpus: parallel field lengths disagree");
  std::filesystem::create_directories(dir);
  CorpusBlobs b = build_blobs(corpus);

  json manifest;
  manifest["version"] = 1;
  manifest["kind"] = "corpus";
  manifest["dims"] = {{"height", corpus.dims.height},
                      {"width", corpus.dims.width},
                      {"channels", corpus.dims.channels}};
  manifest["n_examples"] = corpus.size();
  manifest["max_seq_len"] = corpus.max_seq_len;
  manifest["class_names"] = corpus.class_names;
  manifest["vocab"] = corpus.vocab.words;
  manifest["blobs"] = {
      {"images.f32", blob_entry(b.images, uint64_t(corpus.images.size()))},
      {"tokens.u32", blob_entry(b.tokens, uint64_t(corpus.tokens.size()))},
      {"labels.u32", blob_entry(b.labels, uint64_t(corpus.size()))},
      {"provenance.u8", blob_entry(b.provenance, uint64_t(corpus.size()))},
      {"captions.txt", blob_entry(b.captions, uint64_t(corpus.size()))},
  };

  io::write_file(dir / "images.f32", b.images);
  io::write_file(dir / "tokens.u32", b.tokens);
  io::write_file(dir / "labels.u32", b.labels);
  io::write_file(dir / "provenance.u8", b.provenance);
  io::write_file(dir / "captions.txt", b.captions);
  io::write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

Corpus load_corpus(const std::filesystem::path& dir) {
  std::string text = io::read_file(dir / "manifest.json");
  json manifest;
  try {
    manifest = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::format,
         "corpus manifest is not valid JSON: " + std::string(e.what()));
  }
  require(get_field<int>(manifest, "version") == 1, ErrorKind::format,
          "manifest: unsupported version");
  require(get_field<std::string>(manifest, "kind") == "corpus",
          ErrorKind::format, "manifest: kind is not 'corpus'");

  Corpus c;
  json dims = get_field<json>(manifest, "dims");
  c.dims.height = get_field<int>(dims, "height");
  c.dims.width = get_field<int>(dims, "width");
  c.dims.channels = get_field<int>(dims, "channels");
  require(c.dims.height > 0 && c.dims.width > 0 && c.dims.channels > 0,
          ErrorKind::format, "manifest: non-positive dims");
  const Index n = get_field<Index>(manifest, "n_examples");
  c.max_seq_len = get_field<int>(manifest, "max_seq_len");
  require(n >= 0 && c.max_seq_len > 0, ErrorKind::format,
          "manifest: bad counts");
  c.class_names = get_field<std::vector<std::string>>(manifest, "class_names");

  std::vector<std::string> words =
      get_field<std::vector<std::string>>(manifest, "vocab");
  require(words.size() >= 2 && words[0] == "<pad>" && words[1] == "<unk>",
          ErrorKind::format, "manifest: vocab missing reserved entries");
  c.vocab.words = std::move(words);
  for (size_t i = 0; i < c.vocab.words.size(); ++i) {
    bool fresh = c.vocab.ids.emplace(c.vocab.words[i], int32_t(i)).second;
    require(fresh, ErrorKind::format, "manifest: duplicate vocab word");
  }

  json blobs = get_field<json>(manifest, "blobs");
  std::string img_bytes = load_blob(dir, blobs, "images.f32");
  std::string tok_bytes = load_blob(dir, blobs, "tokens.u32");
  std::string lab_bytes = load_blob(dir, blobs, "labels.u32");
  std::string prov_bytes = load_blob(dir, blobs, "provenance.u8");
  std::string cap_bytes = load_blob(dir, blobs, "captions.txt");

  c.images.resize(n, c.dims.pixels());
  io::unpack_values(img_bytes, c.images.data(), size_t(c.images.size()),
                    "images.f32");
  require(c.images.allFinite() && c.images.minCoeff() >= 0.0f &&
              c.images.maxCoeff() <= 1.0f,
          ErrorKind::format, "images.f32: pixel values outside [0,1]");

  c.tokens.resize(n, c.max_seq_len);
  std::vector<uint32_t> utoks(size_t(c.tokens.size()));
  io::unpack_values(tok_bytes, utoks.data(), utoks.size(), "tokens.u32");
  for (Index i = 0; i < c.tokens.size(); ++i) {
    uint32_t t = utoks[size_t(i)];
    require(t < uint32_t(c.vocab.size()), ErrorKind::format,
            "tokens.u32: token id exceeds vocabulary");
    c.tokens.data()[i] = int32_t(t);
  }

  std::vector<uint32_t> ulabs(static_cast<size_t>(n));
  io::unpack_values(lab_bytes, ulabs.data(), ulabs.size(), "labels.u32");
  c.labels.resize(size_t(n));
  for (Index i = 0; i < n; ++i) {
    require(ulabs[size_t(i)] < c.class_names.size(), ErrorKind::format,
            "labels.u32: label exceeds class count");
    c.labels[size_t(i)] = int32_t(ulabs[size_t(i)]);
  }

  require(Index(prov_bytes.size()) == n, ErrorKind::format,
          "provenance.u8: blob length mismatch");
  c.provenance.assign(prov_bytes.begin(), prov_bytes.end());

  c.captions.clear();
  size_t start = 0;
  while (start < cap_bytes.size()) {
    size_t end = cap_bytes.find('\n', start);
    require(end != std::string::npos, ErrorKind::format,
            "captions.txt: missing trailing newline");
    c.captions.emplace_back(cap_bytes, start, end - start);
    start = end + 1;
  }
  require(Index(c.captions.size()) == n, ErrorKind::format,
          "captions.txt: caption count mismatch");
  return c;
}

uint64_t corpus_checksum(const Corpus& corpus) {
  CorpusBlobs b = build_blobs(corpus);
  uint64_t h = 0xcbf29ce484222325ull;
  for (const std::string* s :
       {&b.images, &b.tokens, &b.labels, &b.provenance, &b.captions})
    for (unsigned char ch : *s) {
      h ^= ch;
      h *= 0x100000001b3ull;
    }
  return h;
}

}  // namespace cplab::data
