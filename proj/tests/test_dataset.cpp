#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "cplab/dataset.hpp"
#include "cplab/error.hpp"
#include "doctest.h"

using cplab::ArrF;
using cplab::Error;
using cplab::ErrorKind;
using cplab::Index;
using namespace cplab::data;

namespace fs = std::filesystem;

TEST_CASE("split_words lowercases and strips punctuation") {
  CHECK(split_words("A Photo, of a CIRCLE!") ==
        std::vector<std::string>{"a", "photo", "of", "a", "circle"});
  CHECK(split_words("") == std::vector<std::string>{});
  CHECK(split_words("  --  ") == std::vector<std::string>{});
  CHECK(split_words("x2 y") == std::vector<std::string>{"x2", "y"});
}

TEST_CASE("vocab is a sorted bijection with reserved ids") {
  Vocab v = Vocab::build({"beta alpha", "alpha gamma"});
  CHECK(v.words[0] == "<pad>");
  CHECK(v.words[1] == "<unk>");
  CHECK(v.words == std::vector<std::string>{"<pad>", "<unk>", "alpha", "beta",
                                            "gamma"});
  for (size_t i = 2; i < v.words.size(); ++i)
    CHECK(v.id_of(v.words[i]) == int32_t(i));
  CHECK(v.id_of("delta") == Vocab::kUnk);

  Vocab again = Vocab::build({"alpha gamma", "beta alpha"});
  CHECK(v == again);  // order of source texts is irrelevant
}

TEST_CASE("tokenize pads, truncates, and maps unknown words to UNK") {
  Vocab v = Vocab::build({"a photo of a circle"});
  std::vector<int32_t> empty = tokenize("", v, 6);
  CHECK(empty == std::vector<int32_t>(6, Vocab::kPad));

  std::vector<int32_t> toks = tokenize("a photo of a circle", v, 8);
  CHECK(toks.size() == 8);
  CHECK(detokenize(toks, v) == "a photo of a circle");

  std::vector<int32_t> unk = tokenize("a photo of a zebra", v, 8);
  CHECK(std::count(unk.begin(), unk.end(), Vocab::kUnk) == 1);

  std::vector<int32_t> trunc = tokenize("a photo of a circle", v, 3);
  CHECK(trunc.size() == 3);
  CHECK(detokenize(trunc, v) == "a photo of");
}

TEST_CASE("zero-shot prompt instantiation") {
  std::vector<std::string> one =
      zero_shot_prompts({"circle"}, {"a photo of a {}"});
  CHECK(one == std::vector<std::string>{"a photo of a circle"});

  std::vector<std::string> names = {"circle", "square", "ring"};
  std::vector<std::string> grid = zero_shot_prompts(names, zero_shot_templates());
  CHECK(grid.size() == names.size() * zero_shot_templates().size());
  // class-major order: first block belongs to the first class
  CHECK(grid[0] == "a photo of a circle");
  CHECK(grid[zero_shot_templates().size()] == "a photo of a square");

  CHECK_THROWS_AS(zero_shot_prompts({"circle"}, {"no placeholder here"}),
                  Error);
  CHECK_THROWS_AS(zero_shot_prompts({}, {"a {}"}), Error);
}

TEST_CASE("default template list matches the documented fixture byte for byte") {
  const std::vector<std::string>& tpl = zero_shot_templates();
  CHECK(tpl.size() == 80);
  std::set<std::string> uniq(tpl.begin(), tpl.end());
  CHECK(uniq.size() == tpl.size());

  std::ifstream in(fs::path(CPLAB_SOURCE_DIR) / "docs" /
                   "zero_shot_templates.txt");
  REQUIRE(in.good());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  CHECK(lines == tpl);
}

TEST_CASE("render_shape stays in range and rejects out-of-canvas shapes") {
  cplab::ImageDims dims{16, 16, 3};
  float rgb[3] = {0.9f, 0.1f, 0.1f};
  cplab::nd::Rng rng(3);
  ArrF img = render_shape(dims, 0, rgb, 8.0f, 8.0f, 5.0f, 0.4f, 0.05f, rng);
  CHECK(img.size() == dims.pixels());
  CHECK(img.minCoeff() >= 0.0f);
  CHECK(img.maxCoeff() <= 1.0f);
  // the center pixel of a filled circle is pure (jittered) shape color
  Index at = (Index(8) * 16 + 8) * 3;
  CHECK(img[at + 0] == doctest::Approx(0.9f));
  CHECK(img[at + 1] == doctest::Approx(0.1f));

  cplab::nd::Rng rng2(3);
  ArrF again = render_shape(dims, 0, rgb, 8.0f, 8.0f, 5.0f, 0.4f, 0.05f, rng2);
  CHECK((img == again).all());

  CHECK_THROWS_AS(render_shape(dims, 0, rgb, 2.0f, 8.0f, 5.0f, 0.4f, 0.0f, rng),
                  Error);
  CHECK_THROWS_AS(render_shape(dims, 99, rgb, 8.0f, 8.0f, 5.0f, 0.4f, 0.0f, rng),
                  Error);
}

namespace {
CorpusSpec tiny_spec() {
  CorpusSpec spec;
  spec.n_examples = 100;
  spec.n_classes = 10;
  spec.dims = {16, 16, 3};
  spec.seed = 7;
  return spec;
}
}  // namespace

TEST_CASE("generate_corpus is deterministic and captions name their class") {
  CorpusSpec spec = tiny_spec();
  Corpus a = generate_corpus(spec);
  Corpus b = generate_corpus(spec);
  CHECK(a == b);

  CHECK(a.size() == 100);
  CHECK(a.class_names.size() == 10);
  for (Index i = 0; i < a.size(); ++i) {
    const std::string& cls = a.class_names[size_t(a.labels[size_t(i)])];
    CHECK(a.captions[size_t(i)].find(cls) != std::string::npos);
    CHECK(a.provenance[size_t(i)] == 0);
  }
  CHECK(a.images.minCoeff() >= 0.0f);
  CHECK(a.images.maxCoeff() <= 1.0f);

  // captions tokenize through the shipped vocabulary without unknowns
  for (Index i = 0; i < a.size(); ++i)
    for (Index j = 0; j < a.tokens.cols(); ++j)
      CHECK(a.tokens(i, j) != Vocab::kUnk);

  CorpusSpec other = spec;
  other.seed = 8;
  CHECK_FALSE(generate_corpus(other) == a);
}

TEST_CASE("class histogram is uniform within 5 percent at 10k examples") {
  CorpusSpec spec;
  spec.n_examples = 10000;
  spec.n_classes = 10;
  spec.dims = {16, 16, 3};  // small canvas keeps this test quick
  spec.seed = 1;
  Corpus c = generate_corpus(spec);
  std::vector<int> counts(10, 0);
  for (int32_t l : c.labels) ++counts[size_t(l)];
  for (int k = 0; k < 10; ++k) {
    CHECK(counts[size_t(k)] >= 950);
    CHECK(counts[size_t(k)] <= 1050);
  }
}

TEST_CASE("generate_corpus rejects impossible specs") {
  CorpusSpec spec = tiny_spec();
  spec.max_scale = 0.55f;  // bounding box cannot fit with margins
  try {
    generate_corpus(spec);
    FAIL("expected spec error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::spec);
  }

  CorpusSpec few = tiny_spec();
  few.n_examples = 5;  // fewer examples than classes
  CHECK_THROWS_AS(generate_corpus(few), Error);

  CorpusSpec badpat = tiny_spec();
  badpat.caption_patterns_ = {"no class word"};
  CHECK_THROWS_AS(generate_corpus(badpat), Error);
}

TEST_CASE("split produces disjoint exhaustive deterministic partitions") {
  SplitIndices s = split(1000, {0.8, 0.1, 0.1}, 42);
  CHECK(s.train.size() == 800);
  CHECK(s.probe.size() == 100);
  CHECK(s.test.size() == 100);

  std::set<Index> all;
  for (const auto* part : {&s.train, &s.probe, &s.test})
    for (Index i : *part) {
      CHECK(all.insert(i).second);  // no index in two parts
      CHECK(i >= 0);
      CHECK(i < 1000);
    }
  CHECK(all.size() == 1000);

  SplitIndices again = split(1000, {0.8, 0.1, 0.1}, 42);
  CHECK(again.train == s.train);
  CHECK(again.probe == s.probe);
  CHECK(again.test == s.test);

  SplitIndices other = split(1000, {0.8, 0.1, 0.1}, 43);
  CHECK(other.train != s.train);

  CHECK_THROWS_AS(split(100, {0.5, 0.5, 0.0}, 1), Error);
  CHECK_THROWS_AS(split(100, {0.5, 0.3, 0.3}, 1), Error);
}

TEST_CASE("select materializes rows in order") {
  Corpus c = generate_corpus(tiny_spec());
  std::vector<Index> rows = {5, 0, 99};
  Corpus sub = select(c, rows);
  CHECK(sub.size() == 3);
  for (Index i = 0; i < 3; ++i) {
    Index r = rows[size_t(i)];
    CHECK((sub.images.row(i).array() == c.images.row(r).array()).all());
    CHECK(sub.captions[size_t(i)] == c.captions[size_t(r)]);
    CHECK(sub.labels[size_t(i)] == c.labels[size_t(r)]);
  }
  CHECK(sub.vocab == c.vocab);
  CHECK_THROWS_AS(select(c, {1000}), Error);
}

TEST_CASE("corpus save/load round-trips bit-exactly") {
  Corpus c = generate_corpus(tiny_spec());
  fs::path dir = fs::temp_directory_path() / "cplab_corpus_roundtrip";
  fs::remove_all(dir);
  save_corpus(c, dir);
  Corpus back = load_corpus(dir);
  CHECK(back == c);

  // saving again produces byte-identical files
  std::ifstream m1(dir / "manifest.json");
  std::string before((std::istreambuf_iterator<char>(m1)),
                     std::istreambuf_iterator<char>());
  save_corpus(back, dir);
  std::ifstream m2(dir / "manifest.json");
  std::string after((std::istreambuf_iterator<char>(m2)),
                    std::istreambuf_iterator<char>());
  CHECK(before == after);
  fs::remove_all(dir);
}

TEST_CASE("corpus loader reports truncation, corruption, and bad manifests") {
  Corpus c = generate_corpus(tiny_spec());
  fs::path dir = fs::temp_directory_path() / "cplab_corpus_damage";

  auto reset = [&] {
    fs::remove_all(dir);
    save_corpus(c, dir);
  };

  // truncated image blob -> integrity or format error, never a crash
  reset();
  fs::resize_file(dir / "images.f32", 100);
  CHECK_THROWS_AS(load_corpus(dir), Error);

  // flipped byte -> integrity error
  reset();
  {
    std::fstream f(dir / "labels.u32",
                   std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.put(char(0xff));
  }
  try {
    load_corpus(dir);
    FAIL("expected integrity error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::integrity);
  }

  // unparseable manifest -> format error
  reset();
  {
    std::ofstream f(dir / "manifest.json", std::ios::trunc);
    f << "{not json";
  }
  try {
    load_corpus(dir);
    FAIL("expected format error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::format);
  }

  // wrong version -> format error naming the field
  reset();
  {
    std::ifstream in(dir / "manifest.json");
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    size_t pos = text.find("\"version\": 1");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 12, "\"version\": 9");
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    out << text;
  }
  CHECK_THROWS_AS(load_corpus(dir), Error);

  fs::remove_all(dir);
}

TEST_CASE("corpus checksum is content-sensitive") {
  Corpus a = generate_corpus(tiny_spec());
  Corpus b = a;
  CHECK(corpus_checksum(a) == corpus_checksum(b));
  b.images(0, 0) = b.images(0, 0) < 0.5f ? 1.0f : 0.0f;
  CHECK(corpus_checksum(a) != corpus_checksum(b));
}
