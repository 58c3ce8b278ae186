// Dual-encoder contrastive model: an image tower and a text tower projecting
// into a shared unit-sphere embedding space, trained with the symmetric
// in-batch cross-entropy over a learned-temperature similarity matrix.
//
// Inference reuses the training forward graph with gradients disabled, so
// encode_* output is bit-identical to what the optimizer saw.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cplab/dataset.hpp"
#include "cplab/tape.hpp"
#include "cplab/types.hpp"
#include "json.hpp"

namespace cplab::model {

struct TrainConfig {
  int epochs = 40;
  Index batch_size = 128;
  float lr = 3e-3f;
  float momentum = 0.9f;
  float weight_decay = 1e-4f;
  uint64_t seed = 0;
  int model_width = 1;      // multiplies the hidden width of both towers
  int embed_dim = 64;       // shared embedding dimension
  int text_embed_dim = 32;  // token embedding width
  bool use_conv = false;    // 3x3 conv + relu in front of the image MLP
  int conv_filters = 8;
  bool learnable_logit_scale = true;

  bool operator==(const TrainConfig&) const = default;
};

nlohmann::json train_config_to_json(const TrainConfig& c);
// Strict: every key required, unknown keys rejected.
TrainConfig train_config_from_json(const nlohmann::json& j);

// Hidden layer width of both tower MLPs.
inline int hidden_width(const TrainConfig& c) { return 256 * c.model_width; }

// Temperature is stored pre-exponential and clamped to [0, ln 100] after
// every optimizer step (exp spans [1, 100]).
inline constexpr float kLogitScaleInit = 2.6592600f;  // ln(1/0.07)
inline constexpr float kLogitScaleMax = 4.6051702f;   // ln(100)

struct DualEncoderParams {
  ImageDims dims;
  Index vocab_size = 0;
  TrainConfig config;

  MatF conv_w, conv_b;  // (9*channels) x filters, 1 x filters; conv only
  MatF img_w1, img_b1, img_w2, img_b2;
  MatF tok_embed;  // vocab_size x text_embed_dim
  MatF txt_w1, txt_b1, txt_w2, txt_b2;
  MatF logit_scale;  // 1x1

  // Stable iteration over the live parameter matrices, in serialization
  // order: fn(name, matrix, decay). Only logit_scale is decay-exempt.
  template <class F>
  void visit(F&& fn) {
    visit_impl(*this, fn);
  }
  template <class F>
  void visit(F&& fn) const {
    visit_impl(*this, fn);
  }

  bool operator==(const DualEncoderParams& o) const;

 private:
  template <class Self, class F>
  static void visit_impl(Self& self, F& fn) {
    if (self.config.use_conv) {
      fn("conv_w", self.conv_w, true);
      fn("conv_b", self.conv_b, true);
    }
    fn("img_w1", self.img_w1, true);
    fn("img_b1", self.img_b1, true);
    fn("img_w2", self.img_w2, true);
    fn("img_b2", self.img_b2, true);
    fn("tok_embed", self.tok_embed, true);
    fn("txt_w1", self.txt_w1, true);
    fn("txt_b1", self.txt_b1, true);
    fn("txt_w2", self.txt_w2, true);
    fn("txt_b2", self.txt_b2, true);
    fn("logit_scale", self.logit_scale, false);
  }
};

// He-initialized weights, zero biases, N(0, 0.02) token embeddings,
// logit_scale at its init constant; each matrix drawn from its own child
// stream of `seed`, so the result is independent of visit order.
DualEncoderParams init_params(const TrainConfig& config, const ImageDims& dims,
                              Index vocab_size, uint64_t seed);

// ---- forward graphs ----

// One tape Var per live parameter matrix; same fields as DualEncoderParams.
struct ParamVars {
  nd::Var conv_w, conv_b;
  nd::Var img_w1, img_b1, img_w2, img_b2;
  nd::Var tok_embed;
  nd::Var txt_w1, txt_b1, txt_w2, txt_b2;
  nd::Var logit_scale;
};

ParamVars leaf_params(nd::Tape& tape, const DualEncoderParams& p,
                      bool requires_grad);

// images: n x pixels. Returns n x embed_dim with unit rows.
nd::Var image_tower(nd::Tape& tape, const ParamVars& pv,
                    const DualEncoderParams& p, const MatF& images);

// tokens: n x max_seq_len. Returns n x embed_dim with unit rows.
nd::Var text_tower(nd::Tape& tape, const ParamVars& pv,
                   const DualEncoderParams& p, const MatI& tokens);

// Scalar loss node: with S = exp(logit_scale) * img_emb @ txt_emb^T,
// the mean of image->text and text->image cross-entropies against the
// diagonal. Needs n >= 2 rows to be meaningful.
nd::Var contrastive_graph(nd::Tape& tape, nd::Var img_emb, nd::Var txt_emb,
                          nd::Var logit_scale);

// Value-only form over already-computed embeddings.
float contrastive_loss(const MatF& img_emb, const MatF& txt_emb,
                       float logit_scale);

// ---- inference ----

MatF encode_image(const DualEncoderParams& p, const MatF& images);
MatF encode_text(const DualEncoderParams& p, const MatI& tokens);

// ---- training ----

struct Checkpoint {
  DualEncoderParams params;
  std::vector<float> loss_trace;  // one entry per optimizer step
  uint64_t corpus_checksum = 0;

  bool operator==(const Checkpoint& o) const;
};

// Full-batch SGD with momentum over shuffled minibatches (last partial batch
// dropped). Non-finite values during a step surface as a diverged error
// naming the step. Deterministic in (corpus, config).
Checkpoint train(const data::Corpus& corpus, const TrainConfig& config);

// Directory format: manifest.json (config, shapes, checksums) plus
// weights.f32 (all parameters in visit order) and trace.f32.
// load(save(x)) == x bit-exactly.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace cplab::model
