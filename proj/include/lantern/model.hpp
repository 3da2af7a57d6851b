#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lantern/ops.hpp"
#include "lantern/rng.hpp"
#include "lantern/tape.hpp"
#include "lantern/tensor.hpp"

namespace lantern {

enum class Variant { fused, survey_only, external_only };
enum class Mode { training, eval };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct LanternConfig {
  std::int64_t survey_dim = 24;    // F_s
  std::int64_t external_dim = 24;  // F_e
  std::int64_t d_embed = 32;       // D
  std::int64_t d_proj = 64;
  std::int64_t n_tokens = 8;
  std::int64_t d_token = 8;
  std::int64_t n_heads = 2;
  std::int64_t n_layers = 2;
  std::int64_t d_ffn = 128;
  std::int64_t d_s = 76;
  double dropout_rate = 0.1;
  double noise_sigma = 0.1;

  std::int64_t head_dim() const { return d_token / n_heads; }
  void validate() const;
  // Production dims: D=512, d_proj=2048, tokens 64x32, 8 heads, 3 layers, ffn 4096.
  static LanternConfig production_scale(std::int64_t f_s, std::int64_t f_e, std::int64_t d_s);
};

struct DenseParams {
  ad::Tensor w, b;
};

struct LayerNormParams {
  ad::Tensor gamma, beta;
};

struct EncoderParams {
  DenseParams l1, l2;
};

struct AttentionLayerParams {
  DenseParams q, k, v, o;
  LayerNormParams ln1;
  DenseParams ffn1, ffn2;
  LayerNormParams ln2;
};

struct LanternParams {
  LanternConfig cfg;
  EncoderParams enc_s, enc_e;
  DenseParams proj_s, proj_e;
  std::vector<AttentionLayerParams> layers;
  DenseParams collapse;
  DenseParams gate;
  LayerNormParams fusion_ln;
  DenseParams head;

  // Stable (name, tensor) listing restricted to the tensors the variant uses.
  std::vector<std::pair<std::string, ad::Tensor>> named(Variant v = Variant::fused) const;
  std::int64_t parameter_count(Variant v = Variant::fused) const;
};

LanternParams init_params(const LanternConfig& cfg, std::uint64_t seed);

struct ForwardHooks {
  // Overrides every gate activation with a constant.
  std::optional<double> force_gate;
  // Attention layers skip the residual adds and layer norms.
  bool disable_residual_norm = false;
  // q/k/v/o act as the identity and the FFN sublayer is bypassed, reducing a
  // layer to bare attention arithmetic for hand-computed oracles.
  bool identity_projections = false;
  // Drops the 1/sqrt(head_dim) score scaling.
  bool unit_attention_scale = false;
  // Skips dropout, fusion layer-norm and Gaussian noise.
  bool disable_regularizers = false;
  // When set, receives one (N, n_q, n_kv) softmax-weight tensor per head,
  // layer-major.
  std::vector<ad::Tensor>* capture_attention = nullptr;
};

ad::Tensor encode(ad::Tape& tape, const EncoderParams& enc, const ad::Tensor& x,
                  std::int64_t expect_dim, const char* branch);

// One cross-attention transformer layer; query stream and key/value stream may
// carry different token counts.
ad::Tensor attention_layer(ad::Tape& tape, const AttentionLayerParams& layer,
                           const ad::Tensor& s_tokens, const ad::Tensor& e_tokens,
                           std::int64_t n_heads, const ForwardHooks& hooks = {});

ad::Tensor cross_attention_block(ad::Tape& tape, const LanternParams& params,
                                 const ad::Tensor& h_s, const ad::Tensor& h_e,
                                 const ForwardHooks& hooks = {});

struct FusionResult {
  ad::Tensor h_fused;
  ad::Tensor gate;
};

FusionResult gated_fusion(ad::Tape& tape, const LanternParams& params, const ad::Tensor& h_s,
                          const ad::Tensor& h_t, Mode mode, Rng& rng,
                          const ForwardHooks& hooks = {});

ad::Tensor output_head(ad::Tape& tape, const LanternParams& params, const ad::Tensor& h);

struct ForwardResult {
  ad::Tensor y_hat;
  ad::Tensor gate;  // defined for the fused variant only
};

ForwardResult forward(ad::Tape& tape, const LanternParams& params, const ad::Tensor& x_s,
                      const ad::Tensor& x_e, Variant variant, Mode mode, Rng& rng,
                      const ForwardHooks& hooks = {});

// mask holds {-1,0,1}; mean BCE over m != 0, empty inclusion gives 0.
ad::Tensor masked_bce_loss(ad::Tape& tape, const ad::Tensor& y_hat, const ad::Tensor& mask);

std::vector<double> extract_gate_values(const LanternParams& params, const ad::Tensor& x_s,
                                        const ad::Tensor& x_e);

}  // namespace lantern
