#include "lantern/model.hpp"

#include <cmath>

#include "lantern/errors.hpp"

namespace lantern {

namespace {

using ad::Tape;
using ad::Tensor;
using i64 = std::int64_t;

Tensor dense(Tape& tape, const Tensor& x, const DenseParams& p) {
  return ad::add(tape, ad::matmul(tape, x, p.w), p.b);
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError(msg);
}

}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::fused: return "fused";
    case Variant::survey_only: return "survey_only";
    case Variant::external_only: return "external_only";
  }
  throw ValidationError("unknown variant");
}

Variant variant_from_string(const std::string& s) {
  if (s == "fused") return Variant::fused;
  if (s == "survey_only") return Variant::survey_only;
  if (s == "external_only") return Variant::external_only;
  throw ValidationError("unknown variant '" + s + "' (expected fused, survey_only or external_only)");
}

void LanternConfig::validate() const {
  require(survey_dim >= 1, "config: survey_dim must be >= 1");
  require(external_dim >= 1, "config: external_dim must be >= 1");
  require(d_embed >= 1, "config: d_embed must be >= 1");
  require(d_proj >= 1, "config: d_proj must be >= 1");
  require(n_tokens >= 1 && d_token >= 1, "config: token dims must be >= 1");
  require(n_tokens * d_token == d_proj,
          "config: n_tokens*d_token must equal d_proj, got " + std::to_string(n_tokens) + "*" +
              std::to_string(d_token) + " != " + std::to_string(d_proj));
  require(n_heads >= 1, "config: n_heads must be >= 1");
  require(d_token % n_heads == 0, "config: d_token must be divisible by n_heads, got " +
                                      std::to_string(d_token) + " % " + std::to_string(n_heads));
  require(n_layers >= 1, "config: n_layers must be >= 1");
  require(d_ffn >= 1, "config: d_ffn must be >= 1");
  require(d_s >= 1, "config: d_s must be >= 1");
  require(dropout_rate >= 0.0 && dropout_rate < 1.0, "config: dropout_rate must lie in [0,1)");
  require(noise_sigma >= 0.0, "config: noise_sigma must be >= 0");
}

LanternConfig LanternConfig::production_scale(i64 f_s, i64 f_e, i64 d_s) {
  LanternConfig cfg;
  cfg.survey_dim = f_s;
  cfg.external_dim = f_e;
  cfg.d_embed = 512;
  cfg.d_proj = 2048;
  cfg.n_tokens = 64;
  cfg.d_token = 32;
  cfg.n_heads = 8;
  cfg.n_layers = 3;
  cfg.d_ffn = 4096;
  cfg.d_s = d_s;
  return cfg;
}

std::vector<std::pair<std::string, Tensor>> LanternParams::named(Variant v) const {
  std::vector<std::pair<std::string, Tensor>> out;
  auto push_dense = [&](const std::string& name, const DenseParams& p) {
    out.emplace_back(name + ".w", p.w);
    out.emplace_back(name + ".b", p.b);
  };
  auto push_ln = [&](const std::string& name, const LayerNormParams& p) {
    out.emplace_back(name + ".gamma", p.gamma);
    out.emplace_back(name + ".beta", p.beta);
  };
  if (v != Variant::external_only) {
    push_dense("enc_s.l1", enc_s.l1);
    push_dense("enc_s.l2", enc_s.l2);
  }
  if (v != Variant::survey_only) {
    push_dense("enc_e.l1", enc_e.l1);
    push_dense("enc_e.l2", enc_e.l2);
  }
  if (v == Variant::fused) {
    push_dense("proj_s", proj_s);
    push_dense("proj_e", proj_e);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string base = "layer" + std::to_string(l);
      push_dense(base + ".attn.q", layers[l].q);
      push_dense(base + ".attn.k", layers[l].k);
      push_dense(base + ".attn.v", layers[l].v);
      push_dense(base + ".attn.o", layers[l].o);
      push_ln(base + ".ln1", layers[l].ln1);
      push_dense(base + ".ffn1", layers[l].ffn1);
      push_dense(base + ".ffn2", layers[l].ffn2);
      push_ln(base + ".ln2", layers[l].ln2);
    }
    push_dense("collapse", collapse);
    push_dense("gate", gate);
  }
  push_ln("fusion_ln", fusion_ln);
  push_dense("head", head);
  return out;
}

i64 LanternParams::parameter_count(Variant v) const {
  i64 n = 0;
  for (const auto& [name, t] : named(v)) {
    (void)name;
    n += t.size();
  }
  return n;
}

LanternParams init_params(const LanternConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  auto weight = [&](const std::string& name, i64 rows, i64 cols) {
    Rng rng(Rng::mix(seed, fnv1a(name)));
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Tensor t = Tensor::zeros({rows, cols}, /*requires_grad=*/true);
    auto d = t.mutable_data();
    for (i64 i = 0; i < t.size(); ++i) d[i] = rng.uniform(-limit, limit);
    return t;
  };
  auto make_dense = [&](const std::string& name, i64 in, i64 out_dim) {
    return DenseParams{weight(name + ".w", in, out_dim),
                       Tensor::zeros({out_dim}, /*requires_grad=*/true)};
  };
  auto make_ln = [&](i64 dim) {
    return LayerNormParams{Tensor::full({dim}, 1.0, /*requires_grad=*/true),
                           Tensor::zeros({dim}, /*requires_grad=*/true)};
  };

  LanternParams p;
  p.cfg = cfg;
  p.enc_s = {make_dense("enc_s.l1", cfg.survey_dim, cfg.d_embed),
             make_dense("enc_s.l2", cfg.d_embed, cfg.d_embed)};
  p.enc_e = {make_dense("enc_e.l1", cfg.external_dim, cfg.d_embed),
             make_dense("enc_e.l2", cfg.d_embed, cfg.d_embed)};
  p.proj_s = make_dense("proj_s", cfg.d_embed, cfg.d_proj);
  p.proj_e = make_dense("proj_e", cfg.d_embed, cfg.d_proj);
  for (i64 l = 0; l < cfg.n_layers; ++l) {
    const std::string base = "layer" + std::to_string(l);
    AttentionLayerParams layer;
    layer.q = make_dense(base + ".attn.q", cfg.d_token, cfg.d_token);
    layer.k = make_dense(base + ".attn.k", cfg.d_token, cfg.d_token);
    layer.v = make_dense(base + ".attn.v", cfg.d_token, cfg.d_token);
    layer.o = make_dense(base + ".attn.o", cfg.d_token, cfg.d_token);
    layer.ln1 = make_ln(cfg.d_token);
    layer.ffn1 = make_dense(base + ".ffn1", cfg.d_token, cfg.d_ffn);
    layer.ffn2 = make_dense(base + ".ffn2", cfg.d_ffn, cfg.d_token);
    layer.ln2 = make_ln(cfg.d_token);
    p.layers.push_back(std::move(layer));
  }
  p.collapse = make_dense("collapse", cfg.d_proj, cfg.d_embed);
  p.gate = make_dense("gate", 2 * cfg.d_embed, cfg.d_embed);
  p.fusion_ln = make_ln(cfg.d_embed);
  p.head = make_dense("head", cfg.d_embed, cfg.d_s);
  return p;
}

Tensor encode(Tape& tape, const EncoderParams& enc, const Tensor& x, i64 expect_dim,
              const char* branch) {
  require(x.defined() && x.rank() == 2,
          std::string("encode(") + branch + "): input must be rank 2");
  require(x.extent(1) == expect_dim, std::string("encode(") + branch + "): input " +
                                         ad::shape_str(x.shape()) + " does not match F=" +
                                         std::to_string(expect_dim));
  return dense(tape, ad::relu(tape, dense(tape, x, enc.l1)), enc.l2);
}

Tensor attention_layer(Tape& tape, const AttentionLayerParams& layer, const Tensor& s_tokens,
                       const Tensor& e_tokens, i64 n_heads, const ForwardHooks& hooks) {
  require(s_tokens.rank() == 3 && e_tokens.rank() == 3,
          "attention_layer: token streams must be rank 3");
  require(s_tokens.extent(0) == e_tokens.extent(0),
          "attention_layer: batch extents disagree, " + ad::shape_str(s_tokens.shape()) +
              " vs " + ad::shape_str(e_tokens.shape()));
  const i64 d = s_tokens.extent(2);
  require(e_tokens.extent(2) == d, "attention_layer: token widths disagree, " +
                                       ad::shape_str(s_tokens.shape()) + " vs " +
                                       ad::shape_str(e_tokens.shape()));
  require(n_heads >= 1 && d % n_heads == 0,
          "attention_layer: token width " + std::to_string(d) +
              " not divisible by n_heads=" + std::to_string(n_heads));
  const i64 hd = d / n_heads;

  Tensor q = hooks.identity_projections ? s_tokens : dense(tape, s_tokens, layer.q);
  Tensor k = hooks.identity_projections ? e_tokens : dense(tape, e_tokens, layer.k);
  Tensor v = hooks.identity_projections ? e_tokens : dense(tape, e_tokens, layer.v);

  std::vector<Tensor> head_outputs;
  head_outputs.reserve(static_cast<std::size_t>(n_heads));
  for (i64 h = 0; h < n_heads; ++h) {
    Tensor qh = ad::slice_last(tape, q, h * hd, hd);
    Tensor kh = ad::slice_last(tape, k, h * hd, hd);
    Tensor vh = ad::slice_last(tape, v, h * hd, hd);
    Tensor scores = ad::matmul(tape, qh, ad::transpose_last2(tape, kh));
    if (!hooks.unit_attention_scale) {
      scores = ad::scale(tape, scores, 1.0 / std::sqrt(static_cast<double>(hd)));
    }
    Tensor weights = ad::softmax(tape, scores);
    if (hooks.capture_attention) hooks.capture_attention->push_back(weights);
    head_outputs.push_back(ad::matmul(tape, weights, vh));
  }
  Tensor attn = head_outputs.size() == 1 ? head_outputs[0]
                                         : ad::concat_last(tape, head_outputs);
  if (!hooks.identity_projections) attn = dense(tape, attn, layer.o);

  Tensor x1 = hooks.disable_residual_norm
                  ? attn
                  : ad::layer_norm(tape, ad::add(tape, s_tokens, attn), layer.ln1.gamma,
                                   layer.ln1.beta);
  if (hooks.identity_projections) return x1;

  Tensor ffn = dense(tape, ad::relu(tape, dense(tape, x1, layer.ffn1)), layer.ffn2);
  return hooks.disable_residual_norm
             ? ffn
             : ad::layer_norm(tape, ad::add(tape, x1, ffn), layer.ln2.gamma, layer.ln2.beta);
}

Tensor cross_attention_block(Tape& tape, const LanternParams& params, const Tensor& h_s,
                             const Tensor& h_e, const ForwardHooks& hooks) {
  const auto& cfg = params.cfg;
  require(h_s.rank() == 2 && h_s.extent(1) == cfg.d_embed,
          "cross_attention_block: h_s must be [N," + std::to_string(cfg.d_embed) + "], got " +
              ad::shape_str(h_s.shape()));
  require(h_e.rank() == 2 && h_e.extent(1) == cfg.d_embed,
          "cross_attention_block: h_e must be [N," + std::to_string(cfg.d_embed) + "], got " +
              ad::shape_str(h_e.shape()));
  require(h_s.extent(0) == h_e.extent(0), "cross_attention_block: batch extents disagree");
  const i64 n = h_s.extent(0);

  Tensor s = ad::reshape(tape, dense(tape, h_s, params.proj_s), {n, cfg.n_tokens, cfg.d_token});
  Tensor e = ad::reshape(tape, dense(tape, h_e, params.proj_e), {n, cfg.n_tokens, cfg.d_token});
  for (const auto& layer : params.layers) {
    s = attention_layer(tape, layer, s, e, cfg.n_heads, hooks);
  }
  return dense(tape, ad::reshape(tape, s, {n, cfg.d_proj}), params.collapse);
}

FusionResult gated_fusion(Tape& tape, const LanternParams& params, const Tensor& h_s,
                          const Tensor& h_t, Mode mode, Rng& rng, const ForwardHooks& hooks) {
  require(h_s.rank() == 2 && h_t.rank() == 2 && h_s.shape() == h_t.shape(),
          "gated_fusion: shape mismatch " + ad::shape_str(h_s.shape()) + " vs " +
              ad::shape_str(h_t.shape()));
  Tensor g;
  if (hooks.force_gate) {
    g = Tensor::full(h_s.shape(), *hooks.force_gate);
  } else {
    std::vector<Tensor> both{h_s, h_t};
    g = ad::sigmoid(tape, dense(tape, ad::concat_last(tape, both), params.gate));
  }
  Tensor fused = ad::add(tape, h_s, ad::mul(tape, g, ad::sub(tape, h_t, h_s)));
  if (!hooks.disable_regularizers) {
    const bool training = mode == Mode::training;
    fused = ad::dropout(tape, fused, params.cfg.dropout_rate, training, rng);
    fused = ad::layer_norm(tape, fused, params.fusion_ln.gamma, params.fusion_ln.beta);
    fused = ad::gaussian_noise(tape, fused, params.cfg.noise_sigma, training, rng);
  }
  return {fused, g};
}

Tensor output_head(Tape& tape, const LanternParams& params, const Tensor& h) {
  require(h.rank() == 2 && h.extent(1) == params.cfg.d_embed,
          "output_head: input must be [N," + std::to_string(params.cfg.d_embed) + "], got " +
              ad::shape_str(h.shape()));
  return ad::sigmoid(tape, dense(tape, h, params.head));
}

ForwardResult forward(Tape& tape, const LanternParams& params, const Tensor& x_s,
                      const Tensor& x_e, Variant variant, Mode mode, Rng& rng,
                      const ForwardHooks& hooks) {
  const auto& cfg = params.cfg;
  const bool training = mode == Mode::training;

  auto single_branch = [&](const EncoderParams& enc, const Tensor& x, i64 dim,
                           const char* branch) {
    Tensor h = encode(tape, enc, x, dim, branch);
    if (!hooks.disable_regularizers) {
      h = ad::dropout(tape, h, cfg.dropout_rate, training, rng);
      h = ad::layer_norm(tape, h, params.fusion_ln.gamma, params.fusion_ln.beta);
    }
    return ForwardResult{output_head(tape, params, h), Tensor{}};
  };

  switch (variant) {
    case Variant::survey_only:
      return single_branch(params.enc_s, x_s, cfg.survey_dim, "survey");
    case Variant::external_only:
      return single_branch(params.enc_e, x_e, cfg.external_dim, "external");
    case Variant::fused: break;
  }

  require(x_s.defined() && x_e.defined() && x_s.rank() == 2 && x_e.rank() == 2 &&
              x_s.extent(0) == x_e.extent(0),
          "forward: x_s and x_e must share the batch extent");
  Tensor h_s = encode(tape, params.enc_s, x_s, cfg.survey_dim, "survey");
  Tensor h_e = encode(tape, params.enc_e, x_e, cfg.external_dim, "external");
  Tensor h_t = cross_attention_block(tape, params, h_s, h_e, hooks);
  FusionResult fusion = gated_fusion(tape, params, h_s, h_t, mode, rng, hooks);
  return {output_head(tape, params, fusion.h_fused), fusion.gate};
}

Tensor masked_bce_loss(Tape& tape, const Tensor& y_hat, const Tensor& mask) {
  require(y_hat.defined() && mask.defined() && y_hat.shape() == mask.shape(),
          "masked_bce_loss: shape mismatch " + ad::shape_str(y_hat.shape()) + " vs " +
              ad::shape_str(mask.shape()));
  const auto md = mask.data();
  i64 included = 0;
  for (i64 i = 0; i < mask.size(); ++i) {
    require(md[i] == -1.0 || md[i] == 0.0 || md[i] == 1.0,
            "masked_bce_loss: mask values must lie in {-1,0,1}, got " + std::to_string(md[i]));
    included += md[i] != 0.0;
  }
  if (included == 0) return Tensor::scalar(0.0);

  Tensor target = Tensor::zeros(mask.shape());
  Tensor inv_target = Tensor::zeros(mask.shape());
  Tensor include = Tensor::zeros(mask.shape());
  for (i64 i = 0; i < mask.size(); ++i) {
    target.mutable_data()[i] = md[i] == 1.0 ? 1.0 : 0.0;
    inv_target.mutable_data()[i] = md[i] == -1.0 ? 1.0 : 0.0;
    include.mutable_data()[i] = md[i] != 0.0 ? 1.0 : 0.0;
  }

  Tensor log_y = ad::clamped_log(tape, y_hat, 1e-7);
  Tensor one_minus = ad::sub(tape, Tensor::full(y_hat.shape(), 1.0), y_hat);
  Tensor log_om = ad::clamped_log(tape, one_minus, 1e-7);
  Tensor ll = ad::add(tape, ad::mul(tape, target, log_y), ad::mul(tape, inv_target, log_om));
  Tensor masked = ad::mul(tape, include, ll);
  return ad::scale(tape, ad::sum_all(tape, masked), -1.0 / static_cast<double>(included));
}

std::vector<double> extract_gate_values(const LanternParams& params, const Tensor& x_s,
                                        const Tensor& x_e) {
  Tape tape(/*recording=*/false);
  Rng rng(0);  // eval mode draws nothing
  ForwardResult r = forward(tape, params, x_s, x_e, Variant::fused, Mode::eval, rng);
  auto g = r.gate.data();
  return {g.begin(), g.end()};
}

}  // namespace lantern
