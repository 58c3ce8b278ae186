#include "cplab/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <string>
#include <utility>

#include "cplab/error.hpp"
#include "cplab/optim.hpp"
#include "cplab/rng.hpp"
#include "cplab/serialize.hpp"
#include "jsonio.hpp"

namespace cplab::model {

using nlohmann::json;
using io::get_field;
using nd::Rng;
using nd::Tape;
using nd::Var;

namespace {

constexpr int kConvKernel = 3;
constexpr const char* kConfigKeys[] = {
    "epochs",        "batch_size", "lr",
    "momentum",      "weight_decay", "seed",
    "model_width",   "embed_dim",  "text_embed_dim",
    "use_conv",      "conv_filters", "learnable_logit_scale"};

void validate(const TrainConfig& c) {
  require(c.epochs >= 0, ErrorKind::argument, "epochs must be >= 0");
  require(c.batch_size >= 2, ErrorKind::argument, "batch_size must be >= 2");
  require(c.lr > 0.0f && std::isfinite(c.lr), ErrorKind::argument,
          "lr must be positive");
  require(c.momentum >= 0.0f && c.momentum < 1.0f, ErrorKind::argument,
          "momentum must be in [0,1)");
  require(c.weight_decay >= 0.0f, ErrorKind::argument,
          "weight_decay must be >= 0");
  require(c.model_width >= 1, ErrorKind::argument, "model_width must be >= 1");
  require(c.embed_dim >= 1 && c.text_embed_dim >= 1, ErrorKind::argument,
          "embedding dimensions must be >= 1");
  require(!c.use_conv || c.conv_filters >= 1, ErrorKind::argument,
          "conv_filters must be >= 1");
}

// Flattened width of the image-tower input to the first dense layer.
Index image_mlp_input(const TrainConfig& c, const ImageDims& dims) {
  if (!c.use_conv) return dims.pixels();
  return Index(dims.height - kConvKernel + 1) *
         (dims.width - kConvKernel + 1) * c.conv_filters;
}

bool mats_equal(const MatF& a, const MatF& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  if (a.size() == 0) return true;
  return std::memcmp(a.data(), b.data(), sizeof(float) * size_t(a.size())) ==
         0;
}

void fill_normal(MatF& m, float stddev, Rng rng) {
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = rng.normal(0.0f, stddev);
}

Var* var_field(ParamVars& pv, std::string_view name) {
  if (name == "conv_w") return &pv.conv_w;
  if (name == "conv_b") return &pv.conv_b;
  if (name == "img_w1") return &pv.img_w1;
  if (name == "img_b1") return &pv.img_b1;
  if (name == "img_w2") return &pv.img_w2;
  if (name == "img_b2") return &pv.img_b2;
  if (name == "tok_embed") return &pv.tok_embed;
  if (name == "txt_w1") return &pv.txt_w1;
  if (name == "txt_b1") return &pv.txt_b1;
  if (name == "txt_w2") return &pv.txt_w2;
  if (name == "txt_b2") return &pv.txt_b2;
  if (name == "logit_scale") return &pv.logit_scale;
  fail(ErrorKind::argument, "unknown parameter '" + std::string(name) + "'");
}

}  // namespace

json train_config_to_json(const TrainConfig& c) {
  return json{{"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"lr", c.lr},
              {"momentum", c.momentum},
              {"weight_decay", c.weight_decay},
              {"seed", c.seed},
              {"model_width", c.model_width},
              {"embed_dim", c.embed_dim},
              {"text_embed_dim", c.text_embed_dim},
              {"use_conv", c.use_conv},
              {"conv_filters", c.conv_filters},
              {"learnable_logit_scale", c.learnable_logit_scale}};
}

TrainConfig train_config_from_json(const json& j) {
  require(j.is_object(), ErrorKind::format, "train config must be an object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool known = false;
    for (const char* k : kConfigKeys) known = known || key == k;
    require(known, ErrorKind::format,
            "train config: unknown key '" + key + "'");
  }
  TrainConfig c;
  c.epochs = get_field<int>(j, "epochs");
  c.batch_size = get_field<Index>(j, "batch_size");
  c.lr = get_field<float>(j, "lr");
  c.momentum = get_field<float>(j, "momentum");
  c.weight_decay = get_field<float>(j, "weight_decay");
  c.seed = get_field<uint64_t>(j, "seed");
  c.model_width = get_field<int>(j, "model_width");
  c.embed_dim = get_field<int>(j, "embed_dim");
  c.text_embed_dim = get_field<int>(j, "text_embed_dim");
  c.use_conv = get_field<bool>(j, "use_conv");
  c.conv_filters = get_field<int>(j, "conv_filters");
  c.learnable_logit_scale = get_field<bool>(j, "learnable_logit_scale");
  return c;
}

bool DualEncoderParams::operator==(const DualEncoderParams& o) const {
  return dims == o.dims && vocab_size == o.vocab_size && config == o.config &&
         mats_equal(conv_w, o.conv_w) && mats_equal(conv_b, o.conv_b) &&
         mats_equal(img_w1, o.img_w1) && mats_equal(img_b1, o.img_b1) &&
         mats_equal(img_w2, o.img_w2) && mats_equal(img_b2, o.img_b2) &&
         mats_equal(tok_embed, o.tok_embed) && mats_equal(txt_w1, o.txt_w1) &&
         mats_equal(txt_b1, o.txt_b1) && mats_equal(txt_w2, o.txt_w2) &&
         mats_equal(txt_b2, o.txt_b2) && mats_equal(logit_scale, o.logit_scale);
}

DualEncoderParams init_params(const TrainConfig& config, const ImageDims& dims,
                              Index vocab_size, uint64_t seed) {
  validate(config);
  require(dims.height > 0 && dims.width > 0 && dims.channels > 0,
          ErrorKind::argument, "image dims must be positive");
  require(!config.use_conv || (dims.height >= kConvKernel &&
                               dims.width >= kConvKernel),
          ErrorKind::argument, "image too small for the conv kernel");
  require(vocab_size >= 2, ErrorKind::argument,
          "vocabulary must hold the reserved tokens");

  DualEncoderParams p;
  p.dims = dims;
  p.vocab_size = vocab_size;
  p.config = config;

  const Index hidden = hidden_width(config);
  const Index img_in = image_mlp_input(config, dims);
  if (config.use_conv) {
    p.conv_w.resize(Index(kConvKernel) * kConvKernel * dims.channels,
                    config.conv_filters);
    p.conv_b = MatF::Zero(1, config.conv_filters);
  }
  p.img_w1.resize(img_in, hidden);
  p.img_b1 = MatF::Zero(1, hidden);
  p.img_w2.resize(hidden, config.embed_dim);
  p.img_b2 = MatF::Zero(1, config.embed_dim);
  p.tok_embed.resize(vocab_size, config.text_embed_dim);
  p.txt_w1.resize(config.text_embed_dim, hidden);
  p.txt_b1 = MatF::Zero(1, hidden);
  p.txt_w2.resize(hidden, config.embed_dim);
  p.txt_b2 = MatF::Zero(1, config.embed_dim);
  p.logit_scale = MatF::Constant(1, 1, kLogitScaleInit);

  // He-scaled normals for weights (fan-in = rows under the x*W convention),
  // small normals for the embedding table. Each matrix draws from its own
  // child stream so adding or removing one cannot shift the others.
  const Rng root = Rng(seed).child("init");
  p.visit([&](const char* name, MatF& m, bool) {
    const std::string n(name);
    if (n == "logit_scale" || n.find("_b") != std::string::npos) return;
    const float stddev =
        (n == "tok_embed") ? 0.02f : std::sqrt(2.0f / float(m.rows()));
    fill_normal(m, stddev, root.child(n));
  });
  return p;
}

ParamVars leaf_params(Tape& tape, const DualEncoderParams& p,
                      bool requires_grad) {
  ParamVars pv;
  p.visit([&](const char* name, const MatF& m, bool) {
    *var_field(pv, name) = tape.leaf(m, requires_grad);
  });
  return pv;
}

Var image_tower(Tape& tape, const ParamVars& pv, const DualEncoderParams& p,
                const MatF& images) {
  require(images.cols() == p.dims.pixels(), ErrorKind::dimension,
          "image rows do not match the model's pixel count");
  Var x = tape.leaf(images);
  if (p.config.use_conv)
    x = tape.relu(tape.conv2d(x, pv.conv_w, pv.conv_b, p.dims, kConvKernel));
  Var h = tape.relu(tape.add_rowvec(tape.matmul(x, pv.img_w1), pv.img_b1));
  return tape.l2_normalize(
      tape.add_rowvec(tape.matmul(h, pv.img_w2), pv.img_b2));
}

Var text_tower(Tape& tape, const ParamVars& pv, const DualEncoderParams& p,
               const MatI& tokens) {
  Var e = tape.embedding_mean(pv.tok_embed, tokens, data::Vocab::kPad);
  Var h = tape.relu(tape.add_rowvec(tape.matmul(e, pv.txt_w1), pv.txt_b1));
  return tape.l2_normalize(
      tape.add_rowvec(tape.matmul(h, pv.txt_w2), pv.txt_b2));
}

Var contrastive_graph(Tape& tape, Var img_emb, Var txt_emb, Var logit_scale) {
  const Index n = tape.mat(img_emb).rows();
  require(n >= 2, ErrorKind::argument,
          "contrastive loss needs at least two pairs");
  require(tape.mat(txt_emb).rows() == n, ErrorKind::dimension,
          "towers produced different batch sizes");
  std::vector<int> diag(static_cast<size_t>(n));
  std::iota(diag.begin(), diag.end(), 0);
  Var s = tape.exp(logit_scale);
  Var logits = tape.mul_scalar(tape.matmul_nt(img_emb, txt_emb), s);
  Var li = tape.softmax_xent(logits, diag);
  Var lt = tape.softmax_xent(tape.transpose(logits), diag);
  return tape.scale(tape.add(li, lt), 0.5f);
}

float contrastive_loss(const MatF& img_emb, const MatF& txt_emb,
                       float logit_scale) {
  const Index n = img_emb.rows();
  require(n >= 2, ErrorKind::argument,
          "contrastive loss needs at least two pairs");
  require(txt_emb.rows() == n && txt_emb.cols() == img_emb.cols(),
          ErrorKind::dimension, "embedding shapes differ");
  MatF logits = std::exp(logit_scale) * (img_emb * txt_emb.transpose());
  std::vector<int> diag(static_cast<size_t>(n));
  std::iota(diag.begin(), diag.end(), 0);
  return 0.5f * (nd::softmax_xent_value(logits, diag) +
                 nd::softmax_xent_value(MatF(logits.transpose()), diag));
}

// Inference runs the whole batch through one gradient-free tape: a single
// forward keeps duplicate rows bit-identical (transient memory is a few
// matrices of batch size, fine at this scale).

MatF encode_image(const DualEncoderParams& p, const MatF& images) {
  Tape tape;
  ParamVars pv = leaf_params(tape, p, false);
  return tape.mat(image_tower(tape, pv, p, images));
}

MatF encode_text(const DualEncoderParams& p, const MatI& tokens) {
  Tape tape;
  ParamVars pv = leaf_params(tape, p, false);
  return tape.mat(text_tower(tape, pv, p, tokens));
}

bool Checkpoint::operator==(const Checkpoint& o) const {
  if (!(params == o.params) || corpus_checksum != o.corpus_checksum ||
      loss_trace.size() != o.loss_trace.size())
    return false;
  return loss_trace.empty() ||
         std::memcmp(loss_trace.data(), o.loss_trace.data(),
                     sizeof(float) * loss_trace.size()) == 0;
}

Checkpoint train(const data::Corpus& corpus, const TrainConfig& config) {
  validate(config);
  const Index n = corpus.size();
  require(n > 0, ErrorKind::argument, "cannot train on an empty corpus");
  const Index steps_per_epoch = n / config.batch_size;  // last partial dropped
  require(config.epochs == 0 || steps_per_epoch >= 1, ErrorKind::argument,
          "batch_size exceeds the corpus");

  Checkpoint ckpt;
  ckpt.params =
      init_params(config, corpus.dims, corpus.vocab.size(), config.seed);
  ckpt.corpus_checksum = data::corpus_checksum(corpus);
  DualEncoderParams& params = ckpt.params;

  nd::SgdMomentum opt;
  opt.lr = config.lr;
  opt.momentum = config.momentum;
  opt.weight_decay = config.weight_decay;

  const Rng train_rng = Rng(config.seed).child("train");
  MatF xb(config.batch_size, corpus.images.cols());
  MatI tb(config.batch_size, corpus.tokens.cols());
  Index global_step = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng epoch_rng = train_rng.child("epoch-" + std::to_string(epoch));
    const std::vector<Index> perm = epoch_rng.permutation(n);
    for (Index s = 0; s < steps_per_epoch; ++s, ++global_step) {
      for (Index r = 0; r < config.batch_size; ++r) {
        const Index src = perm[size_t(s * config.batch_size + r)];
        xb.row(r) = corpus.images.row(src);
        tb.row(r) = corpus.tokens.row(src);
      }
      try {
        Tape tape;
        ParamVars pv = leaf_params(tape, params, true);
        Var u = image_tower(tape, pv, params, xb);
        Var v = text_tower(tape, pv, params, tb);
        Var loss = contrastive_graph(tape, u, v, pv.logit_scale);
        tape.backward(loss);

        int slot = 0;
        params.visit([&](const char* name, MatF& m, bool decay) {
          const Var pvar = *var_field(pv, name);
          const bool frozen = !config.learnable_logit_scale &&
                              std::string_view(name) == "logit_scale";
          if (!frozen) opt.step(slot, m, tape.grad(pvar), decay);
          ++slot;
        });
        params.logit_scale(0, 0) =
            std::clamp(params.logit_scale(0, 0), 0.0f, kLogitScaleMax);
        ckpt.loss_trace.push_back(tape.value(loss).scalar_value());
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::numeric) throw;
        fail(ErrorKind::diverged,
             "training diverged at step " + std::to_string(global_step) +
                 ": " + e.what());
      }
    }
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt,
                     const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const DualEncoderParams& p = ckpt.params;

  std::string weights;
  json shapes = json::array();
  p.visit([&](const char* name, const MatF& m, bool) {
    shapes.push_back(
        json{{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
    weights += io::pack_values(m.data(), size_t(m.size()));
  });
  std::string trace =
      io::pack_values(ckpt.loss_trace.data(), ckpt.loss_trace.size());

  json manifest;
  manifest["version"] = 1;
  manifest["kind"] = "checkpoint";
  manifest["dims"] = {{"height", p.dims.height},
                      {"width", p.dims.width},
                      {"channels", p.dims.channels}};
  manifest["vocab_size"] = p.vocab_size;
  manifest["corpus_checksum"] = io::checksum_hex(ckpt.corpus_checksum);
  manifest["config"] = train_config_to_json(p.config);
  manifest["params"] = shapes;
  manifest["blobs"] = {
      {"weights.f32",
       io::blob_entry(weights, uint64_t(weights.size() / sizeof(float)))},
      {"trace.f32", io::blob_entry(trace, uint64_t(ckpt.loss_trace.size()))},
  };

  io::write_file(dir / "weights.f32", weights);
  io::write_file(dir / "trace.f32", trace);
  io::write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const json manifest = io::parse_json(io::read_file(dir / "manifest.json"),
                                       "checkpoint manifest");
  require(get_field<int>(manifest, "version") == 1, ErrorKind::format,
          "manifest: unsupported version");
  require(get_field<std::string>(manifest, "kind") == "checkpoint",
          ErrorKind::format, "manifest: kind is not 'checkpoint'");

  const json jd = get_field<json>(manifest, "dims");
  ImageDims dims{get_field<int>(jd, "height"), get_field<int>(jd, "width"),
                 get_field<int>(jd, "channels")};
  const Index vocab_size = get_field<Index>(manifest, "vocab_size");
  const TrainConfig config =
      train_config_from_json(get_field<json>(manifest, "config"));

  Checkpoint ckpt;
  // Shapes are fully determined by (config, dims, vocab); entries in the
  // manifest are validated against them rather than trusted.
  ckpt.params = init_params(config, dims, vocab_size, 0);
  ckpt.corpus_checksum = io::parse_checksum_hex(
      get_field<std::string>(manifest, "corpus_checksum"));

  const json shapes = get_field<json>(manifest, "params");
  size_t entry = 0;
  Index total = 0;
  ckpt.params.visit([&](const char* name, const MatF& m, bool) {
    require(entry < shapes.size(), ErrorKind::format,
            "manifest: missing parameter entry");
    const json& s = shapes.at(entry++);
    require(get_field<std::string>(s, "name") == name &&
                get_field<Index>(s, "rows") == m.rows() &&
                get_field<Index>(s, "cols") == m.cols(),
            ErrorKind::format,
            std::string("manifest: parameter '") + name +
                "' shape does not match the config");
    total += m.size();
  });
  require(entry == shapes.size(), ErrorKind::format,
          "manifest: extra parameter entries");

  const json blobs = get_field<json>(manifest, "blobs");
  const std::string weights =
      io::load_checked_blob(dir, blobs, "weights.f32", "checkpoint");
  std::vector<float> values(static_cast<size_t>(total));
  io::unpack_values(weights, values.data(), values.size(), "weights.f32");
  Index offset = 0;
  ckpt.params.visit([&](const char*, MatF& m, bool) {
    std::memcpy(m.data(), values.data() + offset,
                sizeof(float) * size_t(m.size()));
    offset += m.size();
  });

  const std::string trace =
      io::load_checked_blob(dir, blobs, "trace.f32", "checkpoint");
  const json tentry = get_field<json>(blobs, "trace.f32");
  ckpt.loss_trace.resize(get_field<size_t>(tentry, "count"));
  io::unpack_values(trace, ckpt.loss_trace.data(), ckpt.loss_trace.size(),
                    "trace.f32");
  return ckpt;
}

}  // namespace cplab::model
