// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstring>

#include "doctest.h"
#include "empath/fusion.hpp"
#include "empath/gradcheck.hpp"

using namespace empath;
using namespace empath::fusion;

namespace {

bool bitwise_equal(const Matd& a, const Matd& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

EmbeddingSequence make_seq(Index l, Index d, std::uint64_t seed, Modality m) {
  Rng rng(seed);
  EmbeddingSequence s;
  s.values.resize(l, d);
  uniform_fill(s.values, rng, 1.0);
  s.modality = m;
  s.turn_boundaries = {0};
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// cross-modal attention
// ---------------------------------------------------------------------------

TEST_CASE("singleton text: every fused readout equals the single text value row") {
  Rng rng(1);
  CrossModalFuser fuser;
  fuser.init(6, 2, rng);
  fuser.attn.proj_o.w.value.setIdentity();
  fuser.attn.proj_o.b.value.setZero();
  const EmbeddingSequence speech = make_seq(4, 6, 2, Modality::Speech);
  const EmbeddingSequence text = make_seq(1, 6, 3, Modality::Text);
  const Matd value_row = fuser.attn.proj_v.forward(text.values);
  const EmbeddingSequence fused = fuser.forward(speech, text);
  CHECK(fused.modality == Modality::Fused);
  CHECK(fused.length() == 4);
  for (Index r = 0; r < 4; ++r) {
    const RowVecd readout = fused.values.row(r) - speech.values.row(r);  // undo the residual
    CHECK((readout - value_row.row(0)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("zero query projection: readout is the uniform mean of text value rows") {
  Rng rng(4);
  CrossModalFuser fuser;
  fuser.init(6, 3, rng);
  fuser.attn.proj_q.w.value.setZero();
  fuser.attn.proj_q.b.value.setZero();
  fuser.attn.proj_o.w.value.setIdentity();
  fuser.attn.proj_o.b.value.setZero();
  const EmbeddingSequence speech = make_seq(3, 6, 5, Modality::Speech);
  const EmbeddingSequence text = make_seq(5, 6, 6, Modality::Text);
  const RowVecd mean_value = fuser.attn.proj_v.forward(text.values).colwise().mean();
  const EmbeddingSequence fused = fuser.forward(speech, text);
  for (Index r = 0; r < 3; ++r) {
    const RowVecd readout = fused.values.row(r) - speech.values.row(r);
    CHECK((readout - mean_value).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("cross-modal attention rejects dimension mismatch") {
  Rng rng(7);
  CrossModalFuser fuser;
  fuser.init(6, 2, rng);
  const EmbeddingSequence speech = make_seq(3, 6, 8, Modality::Speech);
  const EmbeddingSequence text = make_seq(3, 4, 9, Modality::Text);
  CHECK_THROWS_AS(fuser.forward(speech, text), ValidationError);
}

// ---------------------------------------------------------------------------
// partial low-rank projection
// ---------------------------------------------------------------------------

TEST_CASE("all-false mask leaves the base projection bitwise untouched") {
  Rng rng(10);
  nn::MaskedLowRankLinear base;
  base.init(5, 4, rng);
  nn::MaskedLowRankLinear adapted = base;
  adapted.attach_lora(2, 8.0, 0.0, rng);
  uniform_fill(adapted.lora->up.value, rng, 0.5);

  Matd x(6, 5);
  uniform_fill(x, rng, 1.0);
  const std::vector<char> none(6, 0);
  CHECK(bitwise_equal(base.forward(x), adapted.forward(x, none)));
}

TEST_CASE("zero up-projection keeps output identical to base even when masked in") {
  Rng rng(11);
  nn::MaskedLowRankLinear layer;
  layer.init(5, 4, rng);
  Matd x(6, 5);
  uniform_fill(x, rng, 1.0);
  const Matd base_out = layer.forward(x);
  layer.attach_lora(3, 16.0, 0.0, rng);  // up-projection starts at zero
  const std::vector<char> all(6, 1);
  const Matd adapted_out = layer.forward(x, all);
  CHECK(bitwise_equal(base_out, adapted_out));
}

TEST_CASE("full-rank delta reproduces a dense projection") {
  const Index d = 4;
  Rng rng(12);
  nn::MaskedLowRankLinear layer;
  layer.init(d, d, rng);
  layer.attach_lora(static_cast<int>(d), static_cast<double>(d), 0.0, rng);
  // with scaling alpha/r = 1: delta = A * B; choose A = I, B = M
  Matd m(d, d);
  uniform_fill(m, rng, 1.0);
  layer.lora->down.value.setIdentity();
  layer.lora->up.value = m;

  Matd x(5, d);
  uniform_fill(x, rng, 1.0);
  const std::vector<char> all(5, 1);
  const Matd got = layer.forward(x, all);
  // dense oracle: x (W + M) + b
  Matd expected = x * (layer.w.value + m);
  expected.rowwise() += layer.b.value.row(0);
  CHECK((got - expected).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("mask length mismatch is rejected") {
  Rng rng(13);
  nn::MaskedLowRankLinear layer;
  layer.init(3, 3, rng);
  layer.attach_lora(1, 1.0, 0.0, rng);
  const std::vector<char> wrong(2, 1);
  CHECK_THROWS_AS(layer.forward(Matd::Ones(4, 3), wrong), ValidationError);
}

TEST_CASE("unmasked positions stay bitwise equal to base while masked ones move") {
  Rng rng(14);
  nn::MaskedLowRankLinear layer;
  layer.init(5, 4, rng);
  Matd x(6, 5);
  uniform_fill(x, rng, 1.0);
  const Matd base_out = layer.forward(x);
  layer.attach_lora(2, 8.0, 0.0, rng);
  uniform_fill(layer.lora->up.value, rng, 0.7);  // make the delta non-trivial
  std::vector<char> mask = {1, 0, 1, 0, 0, 1};
  const Matd out = layer.forward(x, mask);
  for (Index r = 0; r < 6; ++r) {
    if (mask[static_cast<std::size_t>(r)]) {
      CHECK((out.row(r) - base_out.row(r)).cwiseAbs().maxCoeff() > 1e-8);
    } else {
      CHECK(std::memcmp(out.row(r).data(), base_out.row(r).data(), sizeof(double) * 4) == 0);
    }
  }
}

// ---------------------------------------------------------------------------
// toy LM
// ---------------------------------------------------------------------------

namespace {
ToyLM make_lm(Index vocab = 8, Index dim = 8, int layers = 1, int heads = 2,
              std::uint64_t seed = 21, double dropout = 0.0) {
  ToyLMConfig cfg;
  cfg.vocab_size = vocab;
  cfg.model_dim = dim;
  cfg.n_layers = layers;
  cfg.n_heads = heads;
  cfg.max_len = 64;
  cfg.seed = seed;
  PartialAdapterConfig lora;
  lora.rank = 2;
  lora.alpha = 4.0;
  lora.dropout = dropout;
  ToyLM lm;
  Rng rng(seed);
  lm.init(cfg, lora, rng);
  return lm;
}
}  // namespace

TEST_CASE("zero head weights give uniform distributions") {
  ToyLM lm = make_lm(4);
  lm.head.w.value.setZero();
  lm.head.b.value.setZero();
  LMInput input;
  input.tokens = {0, 1, 2, 3, 1};
  const Matd probs = lm_probs(lm, input, Path::Text);
  REQUIRE(probs.rows() == 5);
  for (Index r = 0; r < probs.rows(); ++r)
    for (Index c = 0; c < 4; ++c) CHECK(probs(r, c) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("distributions sum to one and are reproducible for a fixed seed") {
  ToyLM lm = make_lm();
  LMInput input;
  input.tokens = {3, 1, 4, 1, 5};
  const Matd p1 = lm_probs(lm, input, Path::Text);
  for (Index r = 0; r < p1.rows(); ++r) {
    CHECK(std::abs(p1.row(r).sum() - 1.0) < 1e-6);
    CHECK(p1.row(r).minCoeff() >= 0.0);
  }
  ToyLM lm2 = make_lm();  // same seed -> same parameters
  const Matd p2 = lm_probs(lm2, input, Path::Text);
  CHECK(bitwise_equal(p1, p2));
}

TEST_CASE("speech path with inert deltas is bitwise equal to the text path") {
  ToyLM lm = make_lm();  // lora up-projections are zero-initialized
  LMInput input;
  input.tokens = {2, 7, 1, 0};
  input.speech_mask = {1, 1, 0, 0};
  const Matd text = lm.forward(input, Path::Text);
  const Matd speech = lm.forward(input, Path::Speech);
  CHECK(bitwise_equal(text, speech));

  // all-false mask: identical even with active deltas
  Rng delta_rng(99);
  for (auto& block : lm.blocks)
    for (auto* p : {&block.attn.proj_q, &block.attn.proj_k, &block.attn.proj_v,
                    &block.attn.proj_o})
      uniform_fill(p->lora->up.value, delta_rng, 0.5);
  LMInput unmasked = input;
  unmasked.speech_mask.assign(4, 0);
  CHECK(bitwise_equal(lm.forward(unmasked, Path::Text), lm.forward(unmasked, Path::Speech)));
}

TEST_CASE("the decoder is causal: future tokens cannot change earlier rows") {
  ToyLM lm = make_lm();
  LMInput a, b;
  a.tokens = {1, 2, 3, 4};
  b.tokens = {1, 2, 3, 7};  // differs only in the last token
  const Matd pa = lm.forward(a, Path::Text);
  const Matd pb = lm.forward(b, Path::Text);
  CHECK(bitwise_equal(Matd(pa.topRows(3)), Matd(pb.topRows(3))));
  CHECK((pa.row(3) - pb.row(3)).cwiseAbs().maxCoeff() > 1e-12);
}

TEST_CASE("overlong input is rejected") {
  ToyLM lm = make_lm();
  LMInput input;
  input.tokens.assign(65, 1);  // max_len is 64
  CHECK_THROWS_WITH_AS(lm.forward(input, Path::Text), "overlong input", ValidationError);
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

TEST_CASE("ce: uniform distributions over 8 symbols cost ln 8") {
  const Index vocab = 8;
  Matd dists = Matd::Constant(5, vocab, 1.0 / vocab);
  const std::vector<int> targets = {0, 3, 5, 7, 2};
  const std::vector<char> valid(5, 1);
  CHECK(ce_loss(dists, targets, valid) == doctest::Approx(std::log(8.0)).epsilon(1e-12));
}

TEST_CASE("ce: one-hot correct distributions cost zero") {
  Matd dists = Matd::Zero(3, 4);
  const std::vector<int> targets = {1, 0, 3};
  for (Index r = 0; r < 3; ++r) dists(r, targets[static_cast<std::size_t>(r)]) = 1.0;
  const std::vector<char> valid(3, 1);
  CHECK(ce_loss(dists, targets, valid) == doctest::Approx(0.0));
}

TEST_CASE("ce matches an independent scalar-loop oracle on random fixtures") {
  Rng rng(31);
  for (int rep = 0; rep < 20; ++rep) {
    const Index rows = 6, vocab = 7;
    Matd logits(rows, vocab);
    uniform_fill(logits, rng, 2.0);
    const Matd dists = nn::softmax_rows(logits);
    std::vector<int> targets;
    std::vector<char> valid;
    for (Index r = 0; r < rows; ++r) {
      targets.push_back(static_cast<int>(rng.integer(vocab)));
      valid.push_back(rng.bernoulli(0.7) ? 1 : 0);
    }
    if (std::count(valid.begin(), valid.end(), 1) == 0) valid[0] = 1;
    // oracle: plain loop over -log p / |V|
    double acc = 0.0;
    int n = 0;
    for (Index r = 0; r < rows; ++r) {
      if (!valid[static_cast<std::size_t>(r)]) continue;
      acc -= std::log(dists(r, targets[static_cast<std::size_t>(r)]));
      ++n;
    }
    CHECK(ce_loss(dists, targets, valid) == doctest::Approx(acc / n).epsilon(1e-9));
  }
}

TEST_CASE("ce with no valid targets is an error") {
  Matd dists = Matd::Constant(2, 4, 0.25);
  CHECK_THROWS_WITH_AS(ce_loss(dists, {1, 2}, {0, 0}), "no valid targets", ValidationError);
}

TEST_CASE("kl: identical distributions cost zero; hand case at T=1") {
  Matd p(1, 2), q(1, 2);
  p << 0.5, 0.5;
  q << 0.5, 0.5;
  CHECK(kl_distill_loss(p, p, {1}, 1.0) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(kl_distill_loss(p, p, {1}, 2.0) == doctest::Approx(0.0).epsilon(1e-9));

  q << 0.9, 0.1;
  const double expected = 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1);
  CHECK(kl_distill_loss(p, q, {1}, 1.0) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(kl_distill_loss(p, q, {1}, 1.0) == doctest::Approx(0.5108).epsilon(1e-4));
}

TEST_CASE("kl is non-negative over random distribution pairs") {
  Rng rng(32);
  for (int rep = 0; rep < 1000; ++rep) {
    Matd a(1, 6), b(1, 6);
    uniform_fill(a, rng, 3.0);
    uniform_fill(b, rng, 3.0);
    const Matd p = nn::softmax_rows(a);
    const Matd q = nn::softmax_rows(b);
    const double t = rep % 2 == 0 ? 1.0 : 2.0;
    CHECK(kl_distill_loss(p, q, {1}, t) >= -1e-9);
  }
}

TEST_CASE("kl handles one-hot teachers via probability flooring") {
  Matd p(1, 3), q(1, 3);
  p << 0.2, 0.5, 0.3;
  q << 0.0, 1.0, 0.0;  // zero teacher probability where the student has mass
  const double kl = kl_distill_loss(p, q, {1}, 1.0);
  CHECK(std::isfinite(kl));
  CHECK(kl > 0.0);
}

TEST_CASE("total loss arithmetic") {
  CHECK(total_loss(2.0, 0.5, 1.0) == doctest::Approx(2.5));
  CHECK(total_loss(2.0, 0.0, 3.7) == doctest::Approx(2.0));
  CHECK(total_loss(2.0, 0.5, 0.5) == doctest::Approx(2.25));
}

// ---------------------------------------------------------------------------
// greedy decoding
// ---------------------------------------------------------------------------

TEST_CASE("generation: zero budget yields an empty sequence; fixed seed reproduces") {
  ToyLM lm = make_lm(256, 8, 1, 2, 77);
  LMInput input;
  input.tokens = {10, 20, 30};
  CHECK(generate_greedy(lm, input, 0).empty());
  const auto a = generate_greedy(lm, input, 8);
  const auto b = generate_greedy(lm, input, 8);
  CHECK(a == b);
  CHECK(a.size() == 8);
}

TEST_CASE("generation stops at the stop text") {
  ToyLM lm = make_lm(256, 8, 1, 2, 78);
  // force the model to emit byte 'x' forever: zero head, bias peak at 'x'
  lm.head.w.value.setZero();
  lm.head.b.value.setZero();
  lm.head.b.value(0, 'x') = 10.0;
  LMInput input;
  input.tokens = {1};
  const auto out = generate_greedy(lm, input, 50, "xxx");
  CHECK(out.size() == 3);  // stopped as soon as the stop text appeared
}

// ---------------------------------------------------------------------------
// gradients
// ---------------------------------------------------------------------------

TEST_CASE("analytic gradients match finite differences (cross-attn, plora, losses)") {
  gradcheck::StandardSuite suite(4321);
  for (const auto& comp : suite.components()) {
    if (comp.name != "cross_modal_attention" && comp.name != "partial_low_rank_projection" &&
        comp.name != "ce_loss_composite" && comp.name != "kl_loss_composite")
      continue;
    const auto result = gradcheck::check_component(comp);
    INFO(comp.name);
    for (const auto& t : result.tensors) {
      INFO(t.name, " max_rel_err=", t.max_rel_err);
      CHECK(t.pass);
    }
    CHECK(result.pass);
  }
}

TEST_CASE("a sign-flipped gradient is caught and named by the harness") {
  Rng rng(55);
  nn::MaskedLowRankLinear layer;
  layer.init(3, 2, rng);
  Matd x(2, 3);
  uniform_fill(x, rng, 1.0);
  Matd c(2, 2);
  uniform_fill(c, rng, 1.0);

  gradcheck::Component comp;
  comp.name = "sign_flip_double";
  comp.tensors = {{"layer.w", &layer.w}, {"layer.b", &layer.b}};
  comp.loss = [&]() { return layer.forward(x).cwiseProduct(c).sum(); };
  comp.compute_gradients = [&]() {
    layer.w.zero_grad();
    layer.b.zero_grad();
    nn::MaskedLowRankLinear::Cache cache;
    layer.forward(x, {}, &cache);
    layer.backward(cache, c);
    layer.w.grad *= -1.0;  // injected bug
  };
  const auto result = gradcheck::check_component(comp);
  CHECK_FALSE(result.pass);
  REQUIRE(result.tensors.size() == 2);
  CHECK(result.tensors[0].name == "layer.w");
  CHECK_FALSE(result.tensors[0].pass);
  CHECK(result.tensors[1].pass);  // the bias gradient is still correct
}
