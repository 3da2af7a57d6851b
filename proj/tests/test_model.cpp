#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "lantern/errors.hpp"
#include "lantern/grad_check.hpp"
#include "lantern/model.hpp"
#include "lantern/ops.hpp"
#include "lantern/rng.hpp"

using namespace lantern;
using ad::Tape;
using ad::Tensor;

namespace {

LanternConfig toy_config() {
  LanternConfig cfg;
  cfg.survey_dim = 3;
  cfg.external_dim = 3;
  cfg.d_embed = 6;
  cfg.d_proj = 4;
  cfg.n_tokens = 2;
  cfg.d_token = 2;
  cfg.n_heads = 1;
  cfg.n_layers = 1;
  cfg.d_ffn = 4;
  cfg.d_s = 4;
  cfg.dropout_rate = 0.1;
  cfg.noise_sigma = 0.1;
  return cfg;
}

Tensor random_input(std::uint64_t seed, std::int64_t n, std::int64_t f, double scale = 1.0) {
  Rng rng(seed);
  Tensor t = Tensor::zeros({n, f});
  for (std::int64_t i = 0; i < t.size(); ++i) t.mutable_data()[i] = rng.uniform(-scale, scale);
  return t;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data().data(), b.data().data(),
                     sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("init_params: same seed gives identical parameters") {
  LanternConfig cfg;  // desk defaults
  LanternParams a = init_params(cfg, 42);
  LanternParams b = init_params(cfg, 42);
  LanternParams c = init_params(cfg, 43);
  auto na = a.named();
  auto nb = b.named();
  auto nc = c.named();
  REQUIRE(na.size() == nb.size());
  bool all_equal_a_b = true;
  bool all_equal_a_c = true;
  for (std::size_t i = 0; i < na.size(); ++i) {
    CHECK(na[i].first == nb[i].first);
    all_equal_a_b = all_equal_a_b && bitwise_equal(na[i].second, nb[i].second);
    all_equal_a_c = all_equal_a_c && bitwise_equal(na[i].second, nc[i].second);
  }
  CHECK(all_equal_a_b);
  CHECK_FALSE(all_equal_a_c);
}

TEST_CASE("init_params: parameter count matches the closed-form shape arithmetic") {
  LanternConfig cfg;  // desk defaults
  LanternParams p = init_params(cfg, 1);
  auto dense_count = [](std::int64_t in, std::int64_t out) { return in * out + out; };
  const std::int64_t enc_s = dense_count(cfg.survey_dim, cfg.d_embed) +
                             dense_count(cfg.d_embed, cfg.d_embed);
  const std::int64_t enc_e = dense_count(cfg.external_dim, cfg.d_embed) +
                             dense_count(cfg.d_embed, cfg.d_embed);
  const std::int64_t per_layer = 4 * dense_count(cfg.d_token, cfg.d_token) + 2 * cfg.d_token +
                                 dense_count(cfg.d_token, cfg.d_ffn) +
                                 dense_count(cfg.d_ffn, cfg.d_token) + 2 * cfg.d_token;
  const std::int64_t fused_expected =
      enc_s + enc_e + 2 * dense_count(cfg.d_embed, cfg.d_proj) + cfg.n_layers * per_layer +
      dense_count(cfg.d_proj, cfg.d_embed) + dense_count(2 * cfg.d_embed, cfg.d_embed) +
      2 * cfg.d_embed + dense_count(cfg.d_embed, cfg.d_s);
  CHECK(p.parameter_count(Variant::fused) == fused_expected);

  const std::int64_t survey_expected = enc_s + 2 * cfg.d_embed + dense_count(cfg.d_embed, cfg.d_s);
  CHECK(p.parameter_count(Variant::survey_only) == survey_expected);
  CHECK(p.parameter_count(Variant::fused) > p.parameter_count(Variant::survey_only));
  CHECK(p.parameter_count(Variant::external_only) == enc_e + 2 * cfg.d_embed +
                                                         dense_count(cfg.d_embed, cfg.d_s));
}

TEST_CASE("init_params: rejects inconsistent configs") {
  LanternConfig cfg;
  cfg.n_tokens = 7;  // 7*8 != 64
  CHECK_THROWS_AS(init_params(cfg, 1), ValidationError);
  cfg = LanternConfig{};
  cfg.n_heads = 3;  // 8 % 3 != 0
  CHECK_THROWS_AS(init_params(cfg, 1), ValidationError);
}

TEST_CASE("encode: shape contract and zero propagation") {
  LanternConfig cfg;
  LanternParams p = init_params(cfg, 3);
  for (std::int64_t n : {1, 5}) {
    Tape tape(false);
    Tensor h = encode(tape, p.enc_s, Tensor::zeros({n, cfg.survey_dim}), cfg.survey_dim,
                      "survey");
    CHECK(h.shape() == ad::Shape{n, cfg.d_embed});
    for (double v : h.data()) CHECK(v == 0.0);  // zero biases keep the path linear
  }
  Tape tape(false);
  CHECK_THROWS_AS(encode(tape, p.enc_s, Tensor::zeros({2, 5}), cfg.survey_dim, "survey"),
                  ValidationError);
}

TEST_CASE("encode: weight gradients match finite differences") {
  LanternConfig cfg = toy_config();
  LanternParams p = init_params(cfg, 7);
  Tensor x = random_input(21, 2, cfg.survey_dim);
  Tensor w = random_input(22, 2, cfg.d_embed);  // weighting, non-uniform pullback
  auto program = [&](Tape& tape) {
    return ad::sum_all(tape, ad::mul(tape, encode(tape, p.enc_s, x, cfg.survey_dim, "survey"), w));
  };
  std::vector<std::pair<std::string, Tensor>> checked{{"enc_s.l1.w", p.enc_s.l1.w},
                                                      {"enc_s.l1.b", p.enc_s.l1.b},
                                                      {"enc_s.l2.w", p.enc_s.l2.w},
                                                      {"enc_s.l2.b", p.enc_s.l2.b}};
  auto report = ad::grad_check(program, checked);
  CHECK(report.ok());
  CHECK(report.worst() < 1e-4);
}

TEST_CASE("attention layer: hand-computed single-head oracle") {
  LanternConfig cfg = toy_config();
  LanternParams p = init_params(cfg, 5);
  ForwardHooks hooks;
  hooks.identity_projections = true;
  hooks.disable_residual_norm = true;
  hooks.unit_attention_scale = true;
  std::vector<Tensor> captured;
  hooks.capture_attention = &captured;

  Tensor s = Tensor::from_data({1, 1, 2}, {1.0, 0.0});
  Tensor e = Tensor::from_data({1, 2, 2}, {1.0, 0.0, 0.0, 1.0});
  Tape tape(false);
  Tensor out = attention_layer(tape, p.layers[0], s, e, /*n_heads=*/1, hooks);

  REQUIRE(captured.size() == 1);
  CHECK(captured[0].data()[0] == doctest::Approx(0.7311).epsilon(1e-4));
  CHECK(captured[0].data()[1] == doctest::Approx(0.2689).epsilon(1e-4));
  REQUIRE(out.shape() == ad::Shape{1, 1, 2});
  CHECK(out.data()[0] == doctest::Approx(0.7311).epsilon(1e-4));
  CHECK(out.data()[1] == doctest::Approx(0.2689).epsilon(1e-4));
}

TEST_CASE("attention layer: production path scales scores by 1/sqrt(head_dim)") {
  LanternConfig cfg = toy_config();
  LanternParams p = init_params(cfg, 5);
  ForwardHooks hooks;
  hooks.identity_projections = true;
  hooks.disable_residual_norm = true;
  std::vector<Tensor> captured;
  hooks.capture_attention = &captured;

  Tensor s = Tensor::from_data({1, 1, 2}, {1.0, 0.0});
  Tensor e = Tensor::from_data({1, 2, 2}, {1.0, 0.0, 0.0, 1.0});
  Tape tape(false);
  attention_layer(tape, p.layers[0], s, e, 1, hooks);
  REQUIRE(captured.size() == 1);
  // softmax([1,0]/sqrt(2))
  const double z = 1.0 / std::sqrt(2.0);
  const double w0 = std::exp(z) / (std::exp(z) + 1.0);
  CHECK(captured[0].data()[0] == doctest::Approx(w0).epsilon(1e-12));
}

TEST_CASE("attention layer: permutation over external tokens is invisible") {
  LanternConfig cfg;  // desk dims: tokens 8x8, 2 heads
  LanternParams p = init_params(cfg, 11);
  Rng rng(31);
  Tensor s = Tensor::zeros({2, cfg.n_tokens, cfg.d_token});
  Tensor e = Tensor::zeros({2, cfg.n_tokens, cfg.d_token});
  for (std::int64_t i = 0; i < s.size(); ++i) s.mutable_data()[i] = rng.uniform(-1.0, 1.0);
  for (std::int64_t i = 0; i < e.size(); ++i) e.mutable_data()[i] = rng.uniform(-1.0, 1.0);

  // Rotate the token axis of e by 3.
  Tensor e_perm = Tensor::zeros(e.shape());
  for (std::int64_t b = 0; b < 2; ++b) {
    for (std::int64_t t = 0; t < cfg.n_tokens; ++t) {
      const std::int64_t src = (t + 3) % cfg.n_tokens;
      for (std::int64_t d = 0; d < cfg.d_token; ++d) {
        e_perm.mutable_data()[(b * cfg.n_tokens + t) * cfg.d_token + d] =
            e.data()[(b * cfg.n_tokens + src) * cfg.d_token + d];
      }
    }
  }

  Tape tape(false);
  Tensor out_a = attention_layer(tape, p.layers[0], s, e, cfg.n_heads);
  Tensor out_b = attention_layer(tape, p.layers[0], s, e_perm, cfg.n_heads);
  for (std::int64_t i = 0; i < out_a.size(); ++i) {
    CHECK(out_a.data()[i] == doctest::Approx(out_b.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("cross-attention block: gradients through the 2-layer stack") {
  LanternConfig cfg = toy_config();
  cfg.n_layers = 2;
  LanternParams p = init_params(cfg, 13);
  Tensor h_s = random_input(41, 2, cfg.d_embed);
  Tensor h_e = random_input(42, 2, cfg.d_embed);
  Tensor w = random_input(43, 2, cfg.d_embed);
  auto program = [&](Tape& tape) {
    return ad::sum_all(tape, ad::mul(tape, cross_attention_block(tape, p, h_s, h_e), w));
  };
  std::vector<std::pair<std::string, Tensor>> checked;
  for (const auto& [name, t] : p.named()) {
    if (name.rfind("enc_", 0) == 0 || name.rfind("gate", 0) == 0 ||
        name.rfind("head", 0) == 0 || name.rfind("fusion_ln", 0) == 0) {
      continue;  // not part of this subgraph
    }
    checked.emplace_back(name, t);
  }
  // Wider probe than the primitive-op default: through a deep graph the
  // f(x+e)-f(x-e) cancellation noise (~ulp(f)/2eps) must stay below what the
  // 1e-8 denominator floor can absorb at tol 1e-4.
  auto report = ad::grad_check(program, checked, /*eps=*/1e-3);
  INFO(report.summary());
  CHECK(report.ok());
  CHECK(report.worst() < 1e-4);
}

TEST_CASE("gated fusion: saturation identities and midpoint arithmetic") {
  LanternConfig cfg = toy_config();
  LanternParams p = init_params(cfg, 17);
  Tensor h_s = random_input(51, 3, cfg.d_embed);
  Tensor h_t = random_input(52, 3, cfg.d_embed);
  Rng rng(1);

  SUBCASE("g=0 with regularizers off reproduces h_s bitwise") {
    Tape tape(false);
    ForwardHooks hooks;
    hooks.force_gate = 0.0;
    hooks.disable_regularizers = true;
    auto r = gated_fusion(tape, p, h_s, h_t, Mode::eval, rng, hooks);
    CHECK(bitwise_equal(r.h_fused, h_s));
  }

  SUBCASE("g=0 with regularizers on equals norm-transformed h_s in eval mode") {
    Tape tape(false);
    ForwardHooks hooks;
    hooks.force_gate = 0.0;
    auto r = gated_fusion(tape, p, h_s, h_t, Mode::eval, rng, hooks);
    Tensor expect = ad::layer_norm(tape, h_s, p.fusion_ln.gamma, p.fusion_ln.beta);
    CHECK(bitwise_equal(r.h_fused, expect));
  }

  SUBCASE("g=1 reproduces h_t before regularizers") {
    Tape tape(false);
    ForwardHooks hooks;
    hooks.force_gate = 1.0;
    hooks.disable_regularizers = true;
    auto r = gated_fusion(tape, p, h_s, h_t, Mode::eval, rng, hooks);
    for (std::int64_t i = 0; i < h_t.size(); ++i) {
      CHECK(std::fabs(r.h_fused.data()[i] - h_t.data()[i]) <= 1e-12);
    }
  }

  SUBCASE("g=0.5 midpoint") {
    Tape tape(false);
    ForwardHooks hooks;
    hooks.force_gate = 0.5;
    hooks.disable_regularizers = true;
    Tensor a = Tensor::from_data({1, 1}, {0.0});
    Tensor b = Tensor::from_data({1, 1}, {2.0});
    LanternConfig one;
    one.d_embed = 1;
    one.d_proj = 1;
    one.n_tokens = 1;
    one.d_token = 1;
    one.n_heads = 1;
    one.survey_dim = 1;
    one.external_dim = 1;
    one.d_s = 1;
    one.d_ffn = 1;
    LanternParams tiny = init_params(one, 1);
    auto r = gated_fusion(tape, tiny, a, b, Mode::eval, rng, hooks);
    CHECK(r.h_fused.data()[0] == 1.0);
  }

  SUBCASE("learned gate lies strictly inside (0,1)") {
    Tape tape(false);
    auto r = gated_fusion(tape, p, h_s, h_t, Mode::eval, rng);
    CHECK(r.gate.shape() == ad::Shape{3, cfg.d_embed});
    for (double g : r.gate.data()) {
      CHECK(g > 0.0);
      CHECK(g < 1.0);
    }
  }

  SUBCASE("shape mismatch rejected") {
    Tape tape(false);
    CHECK_THROWS_AS(gated_fusion(tape, p, h_s, random_input(1, 2, cfg.d_embed), Mode::eval, rng),
                    ValidationError);
  }
}

TEST_CASE("output head: sigmoid contract") {
  LanternConfig cfg = toy_config();
  LanternParams p = init_params(cfg, 19);

  SUBCASE("zero weights give 0.5 everywhere") {
    for (std::int64_t i = 0; i < p.head.w.size(); ++i) p.head.w.mutable_data()[i] = 0.0;
    Tape tape(false);
    Tensor y = output_head(tape, p, random_input(61, 4, cfg.d_embed));
    CHECK(y.shape() == ad::Shape{4, cfg.d_s});
    for (double v : y.data()) CHECK(v == 0.5);
  }

  SUBCASE("huge inputs stay strictly inside (0,1)") {
    Tape tape(false);
    Tensor y = output_head(tape, p, random_input(62, 4, cfg.d_embed, 1e3));
    for (double v : y.data()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }

  SUBCASE("gradients match finite differences") {
    Tensor h = random_input(63, 2, cfg.d_embed);
    auto program = [&](Tape& tape) { return ad::sum_all(tape, output_head(tape, p, h)); };
    auto report = ad::grad_check(program, {{"head.w", p.head.w}, {"head.b", p.head.b}});
    CHECK(report.ok());
  }
}

TEST_CASE("forward: shape contract and eval determinism") {
  LanternConfig cfg;  // desk defaults
  LanternParams p = init_params(cfg, 23);
  Tensor x_s = random_input(71, 4, cfg.survey_dim);
  Tensor x_e = random_input(72, 4, cfg.external_dim);
  Rng rng(1);

  Tape tape(false);
  auto a = forward(tape, p, x_s, x_e, Variant::fused, Mode::eval, rng);
  auto b = forward(tape, p, x_s, x_e, Variant::fused, Mode::eval, rng);
  CHECK(a.y_hat.shape() == ad::Shape{4, cfg.d_s});
  CHECK(bitwise_equal(a.y_hat, b.y_hat));
  CHECK(a.gate.defined());
  CHECK(a.gate.shape() == ad::Shape{4, cfg.d_embed});
}

TEST_CASE("forward: variant isolation") {
  LanternConfig cfg;
  LanternParams p = init_params(cfg, 29);
  Tensor x_s = random_input(81, 3, cfg.survey_dim);
  Tensor x_e = random_input(82, 3, cfg.external_dim);
  Tensor x_e2 = random_input(83, 3, cfg.external_dim);
  Tensor x_s2 = random_input(84, 3, cfg.survey_dim);
  Rng rng(1);
  Tape tape(false);

  auto s1 = forward(tape, p, x_s, x_e, Variant::survey_only, Mode::eval, rng);
  auto s2 = forward(tape, p, x_s, x_e2, Variant::survey_only, Mode::eval, rng);
  CHECK(bitwise_equal(s1.y_hat, s2.y_hat));
  CHECK_FALSE(s1.gate.defined());

  auto e1 = forward(tape, p, x_s, x_e, Variant::external_only, Mode::eval, rng);
  auto e2 = forward(tape, p, x_s2, x_e, Variant::external_only, Mode::eval, rng);
  CHECK(bitwise_equal(e1.y_hat, e2.y_hat));

  auto f1 = forward(tape, p, x_s, x_e, Variant::fused, Mode::eval, rng);
  auto f2 = forward(tape, p, x_s, x_e2, Variant::fused, Mode::eval, rng);
  CHECK_FALSE(bitwise_equal(f1.y_hat, f2.y_hat));  // fused really reads x_e
}

TEST_CASE("forward: permuting batch rows permutes outputs identically") {
  LanternConfig cfg = toy_config();
  LanternParams p = init_params(cfg, 31);
  Tensor x_s = random_input(91, 3, cfg.survey_dim);
  Tensor x_e = random_input(92, 3, cfg.external_dim);
  const std::vector<std::int64_t> perm{2, 0, 1};
  Tensor x_s_p = Tensor::zeros(x_s.shape());
  Tensor x_e_p = Tensor::zeros(x_e.shape());
  for (std::int64_t r = 0; r < 3; ++r) {
    for (std::int64_t c = 0; c < cfg.survey_dim; ++c) {
      x_s_p.mutable_data()[r * cfg.survey_dim + c] =
          x_s.data()[perm[static_cast<std::size_t>(r)] * cfg.survey_dim + c];
    }
    for (std::int64_t c = 0; c < cfg.external_dim; ++c) {
      x_e_p.mutable_data()[r * cfg.external_dim + c] =
          x_e.data()[perm[static_cast<std::size_t>(r)] * cfg.external_dim + c];
    }
  }
  Rng rng(1);
  Tape tape(false);
  auto base = forward(tape, p, x_s, x_e, Variant::fused, Mode::eval, rng);
  auto permuted = forward(tape, p, x_s_p, x_e_p, Variant::fused, Mode::eval, rng);
  for (std::int64_t r = 0; r < 3; ++r) {
    for (std::int64_t c = 0; c < cfg.d_s; ++c) {
      CHECK(permuted.y_hat.data()[r * cfg.d_s + c] ==
            base.y_hat.data()[perm[static_cast<std::size_t>(r)] * cfg.d_s + c]);
    }
  }
}

TEST_CASE("forward: full network gradients at toy dims") {
  LanternConfig cfg = toy_config();
  LanternParams p = init_params(cfg, 37);
  Tensor x_s = random_input(101, 2, cfg.survey_dim);
  Tensor x_e = random_input(102, 2, cfg.external_dim);
  Tensor mask = Tensor::from_data({2, cfg.d_s}, {1, -1, 0, 1, 0, 0, -1, 1});
  auto program = [&](Tape& tape) {
    Rng rng(1);  // eval mode: unused
    auto r = forward(tape, p, x_s, x_e, Variant::fused, Mode::eval, rng);
    return masked_bce_loss(tape, r.y_hat, mask);
  };
  // eps balances two FD failure modes: cancellation noise (~ulp(f)/2eps)
  // against the 1e-8 denominator floor, and relu kink crossings (probability
  // grows with eps). 3e-4 clears both at these dims.
  auto report = ad::grad_check(program, p.named(), /*eps=*/3e-4);
  INFO(report.summary());
  CHECK(report.ok());
  CHECK(report.worst() < 1e-4);
}

TEST_CASE("masked bce: closed forms and the exclusion contract") {
  Tape tape(false);

  Tensor y1 = Tensor::from_data({1, 1}, {0.5});
  CHECK(masked_bce_loss(tape, y1, Tensor::from_data({1, 1}, {1.0})).item() ==
        doctest::Approx(0.693147).epsilon(1e-6));
  CHECK(masked_bce_loss(tape, y1, Tensor::from_data({1, 1}, {-1.0})).item() ==
        doctest::Approx(0.693147).epsilon(1e-6));

  Tensor y = Tensor::from_data({1, 4}, {0.9, 0.2, 0.4, 0.6});
  Tensor m = Tensor::from_data({1, 4}, {1.0, 0.0, -1.0, 0.0});
  const double base = masked_bce_loss(tape, y, m).item();
  // hand value: mean(-ln 0.9, -ln 0.6)
  CHECK(base == doctest::Approx((-std::log(0.9) - std::log(0.6)) / 2.0).epsilon(1e-12));

  Tensor y_perturbed = Tensor::from_data({1, 4}, {0.9, 0.99, 0.4, 0.01});
  const double perturbed = masked_bce_loss(tape, y_perturbed, m).item();
  CHECK(base == perturbed);  // unchanged to the last bit

  CHECK(masked_bce_loss(tape, y, Tensor::zeros({1, 4})).item() == 0.0);
  CHECK_THROWS_AS(masked_bce_loss(tape, y, Tensor::from_data({1, 4}, {2.0, 0.0, 0.0, 0.0})),
                  ValidationError);
  CHECK_THROWS_AS(masked_bce_loss(tape, y, Tensor::zeros({2, 2})), ValidationError);
}

TEST_CASE("masked bce: excluded positions get exactly zero gradient") {
  Tensor y = Tensor::from_data({2, 3}, {0.9, 0.2, 0.7, 0.3, 0.5, 0.8}, true);
  Tensor m = Tensor::from_data({2, 3}, {1.0, 0.0, -1.0, 0.0, 1.0, 0.0});
  Tape tape;
  Tensor loss = masked_bce_loss(tape, y, m);
  tape.backward(loss);
  auto g = y.grad();
  for (std::int64_t i = 0; i < y.size(); ++i) {
    if (m.data()[i] == 0.0) {
      CHECK(g[i] == 0.0);
    } else {
      CHECK(g[i] != 0.0);
    }
  }
}

TEST_CASE("masked bce: log arguments are clamped at 1e-7") {
  Tape tape(false);
  Tensor y = Tensor::from_data({1, 1}, {1e-12});
  const double loss = masked_bce_loss(tape, y, Tensor::from_data({1, 1}, {1.0})).item();
  CHECK(loss == doctest::Approx(-std::log(1e-7)).epsilon(1e-12));
  Tensor y_hi = Tensor::from_data({1, 1}, {1.0 - 1e-12});
  const double loss_hi = masked_bce_loss(tape, y_hi, Tensor::from_data({1, 1}, {-1.0})).item();
  CHECK(loss_hi == doctest::Approx(-std::log(1e-7)).epsilon(1e-12));
}

TEST_CASE("extract_gate_values: zero gate weights give 0.5") {
  LanternConfig cfg = toy_config();
  LanternParams p = init_params(cfg, 41);
  for (std::int64_t i = 0; i < p.gate.w.size(); ++i) p.gate.w.mutable_data()[i] = 0.0;
  Tensor x_s = random_input(111, 5, cfg.survey_dim);
  Tensor x_e = random_input(112, 5, cfg.external_dim);
  auto values = extract_gate_values(p, x_s, x_e);
  CHECK(values.size() == static_cast<std::size_t>(5 * cfg.d_embed));
  for (double v : values) CHECK(v == 0.5);
}

TEST_CASE("extract_gate_values: strictly inside (0,1), one per user-dimension") {
  LanternConfig cfg = toy_config();
  LanternParams p = init_params(cfg, 43);
  auto values = extract_gate_values(p, random_input(113, 7, cfg.survey_dim),
                                    random_input(114, 7, cfg.external_dim));
  CHECK(values.size() == static_cast<std::size_t>(7 * cfg.d_embed));
  for (double v : values) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("production-scale config instantiates; 2-user forward reports its shapes") {
  LanternConfig cfg = LanternConfig::production_scale(64, 64, 10);
  cfg.validate();
  CHECK(cfg.d_embed == 512);
  CHECK(cfg.d_proj == 2048);
  CHECK(cfg.n_tokens == 64);
  CHECK(cfg.d_token == 32);
  LanternParams p = init_params(cfg, 47);
  MESSAGE("production-scale parameter count (fused): ", p.parameter_count(Variant::fused));
  CHECK(p.parameter_count(Variant::fused) > 1000000);

  Tensor x_s = random_input(121, 2, cfg.survey_dim);
  Tensor x_e = random_input(122, 2, cfg.external_dim);
  Tape tape(false);
  Tensor h_s = encode(tape, p.enc_s, x_s, cfg.survey_dim, "survey");
  CHECK(h_s.shape() == ad::Shape{2, 512});
  Tensor proj = ad::add(tape, ad::matmul(tape, h_s, p.proj_s.w), p.proj_s.b);
  CHECK(proj.shape() == ad::Shape{2, 2048});
  Tensor tokens = ad::reshape(tape, proj, {2, cfg.n_tokens, cfg.d_token});
  CHECK(tokens.shape() == ad::Shape{2, 64, 32});
  MESSAGE("intermediate shapes: ", ad::shape_str(h_s.shape()), " -> ",
          ad::shape_str(proj.shape()), " -> ", ad::shape_str(tokens.shape()));

  Rng rng(1);
  auto r = forward(tape, p, x_s, x_e, Variant::fused, Mode::eval, rng);
  CHECK(r.y_hat.shape() == ad::Shape{2, 10});
}

}  // TEST_SUITE
