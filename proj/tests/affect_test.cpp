// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstring>

#include "doctest.h"
#include "empath/affect.hpp"
#include "empath/gradcheck.hpp"

using namespace empath;
using namespace empath::affect;

namespace {

bool bitwise_equal(const Matd& a, const Matd& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

// Scalar-loop reference for single-head attention; shares no code with the
// implementation.
Matd oracle_single_head(const Matd& x_q, const Matd& x_kv, const nn::MultiHeadAttention& attn) {
  auto project = [](const Matd& x, const nn::MaskedLowRankLinear& p) {
    Matd y(x.rows(), p.w.value.cols());
    for (Index r = 0; r < x.rows(); ++r)
      for (Index c = 0; c < p.w.value.cols(); ++c) {
        double acc = p.b.value(0, c);
        for (Index k = 0; k < x.cols(); ++k) acc += x(r, k) * p.w.value(k, c);
        y(r, c) = acc;
      }
    return y;
  };
  const Matd q = project(x_q, attn.proj_q);
  const Matd k = project(x_kv, attn.proj_k);
  const Matd v = project(x_kv, attn.proj_v);
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Matd readout(q.rows(), v.cols());
  for (Index i = 0; i < q.rows(); ++i) {
    std::vector<double> scores(static_cast<std::size_t>(k.rows()));
    double max_score = -1e300;
    for (Index j = 0; j < k.rows(); ++j) {
      double s = 0.0;
      for (Index c = 0; c < q.cols(); ++c) s += q(i, c) * k(j, c);
      scores[static_cast<std::size_t>(j)] = s * scale;
      max_score = std::max(max_score, s * scale);
    }
    double denom = 0.0;
    for (double& s : scores) {
      s = std::exp(s - max_score);
      denom += s;
    }
    for (Index c = 0; c < v.cols(); ++c) {
      double acc = 0.0;
      for (Index j = 0; j < k.rows(); ++j)
        acc += scores[static_cast<std::size_t>(j)] / denom * v(j, c);
      readout(i, c) = acc;
    }
  }
  return project(readout, attn.proj_o);
}

nn::MultiHeadAttention make_attn(Index dim, int heads, std::uint64_t seed) {
  Rng rng(seed);
  nn::MultiHeadAttention attn;
  attn.init(dim, heads, rng);
  return attn;
}

}  // namespace

TEST_CASE("zero query projection yields the unweighted mean of value rows") {
  nn::MultiHeadAttention attn = make_attn(4, 2, 3);
  attn.proj_q.w.value.setZero();
  attn.proj_q.b.value.setZero();
  attn.proj_o.w.value.setIdentity();
  attn.proj_o.b.value.setZero();
  Rng rng(9);
  Matd x(5, 4);
  uniform_fill(x, rng, 1.0);
  const Matd v = attn.proj_v.forward(x);
  const RowVecd mean_v = v.colwise().mean();
  const Matd out = attn.forward(x, x);
  for (Index r = 0; r < out.rows(); ++r)
    CHECK((out.row(r) - mean_v).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("singleton sequence: attention weight is exactly [1]") {
  nn::MultiHeadAttention attn = make_attn(6, 3, 4);
  Rng rng(10);
  Matd x(1, 6);
  uniform_fill(x, rng, 1.0);
  nn::MultiHeadAttention::Cache cache;
  const Matd out = attn.forward(x, x, &cache);
  for (const Matd& a : cache.attn) {
    REQUIRE(a.rows() == 1);
    REQUIRE(a.cols() == 1);
    CHECK(a(0, 0) == 1.0);
  }
  const Matd v = attn.proj_v.forward(x);
  const Matd expected = attn.proj_o.forward(v);
  CHECK((out - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("single-head attention matches the scalar-loop oracle") {
  nn::MultiHeadAttention attn = make_attn(2, 1, 5);
  Rng rng(11);
  Matd x(2, 2);
  uniform_fill(x, rng, 1.0);
  const Matd out = attn.forward(x, x);
  const Matd expected = oracle_single_head(x, x, attn);
  CHECK((out - expected).cwiseAbs().maxCoeff() < 1e-12);

  // and a 2-query x 3-key cross case
  Matd q_in(2, 2), kv_in(3, 2);
  uniform_fill(q_in, rng, 1.0);
  uniform_fill(kv_in, rng, 1.0);
  const Matd cross = attn.forward(q_in, kv_in);
  const Matd cross_expected = oracle_single_head(q_in, kv_in, attn);
  CHECK((cross - cross_expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("attention weight rows sum to one for every head") {
  nn::MultiHeadAttention attn = make_attn(8, 4, 6);
  Rng rng(12);
  Matd x(7, 8);
  uniform_fill(x, rng, 2.0);
  nn::MultiHeadAttention::Cache cache;
  attn.forward(x, x, &cache);
  for (const Matd& a : cache.attn)
    for (Index r = 0; r < a.rows(); ++r) CHECK(std::abs(a.row(r).sum() - 1.0) < 1e-6);
}

TEST_CASE("self-attention preserves L x model_dim for all small shapes") {
  nn::MultiHeadAttention attn = make_attn(8, 2, 7);
  Rng rng(13);
  for (Index l = 1; l <= 12; ++l) {
    Matd x(l, 8);
    uniform_fill(x, rng, 1.0);
    EmbeddingSequence seq;
    seq.values = x;
    seq.turn_boundaries = {0};
    const EmbeddingSequence out = mhsa(seq, attn);
    CHECK(out.length() == l);
    CHECK(out.dim() == 8);
  }
}

TEST_CASE("mhsa rejects dimension mismatch") {
  nn::MultiHeadAttention attn = make_attn(8, 2, 7);
  EmbeddingSequence seq;
  seq.values = Matd::Ones(3, 4);
  seq.turn_boundaries = {0};
  CHECK_THROWS_AS(mhsa(seq, attn), ValidationError);
}

TEST_CASE("concat_history: single turn, index arithmetic, reversal") {
  auto seq = [](Index l, double fill) {
    EmbeddingSequence s;
    s.values = Matd::Constant(l, 4, fill);
    s.turn_boundaries = {0};
    return s;
  };
  const EmbeddingSequence one = concat_history({seq(3, 1.0)});
  CHECK(one.length() == 3);
  CHECK(one.turn_boundaries == std::vector<Index>{0});

  const EmbeddingSequence three = concat_history({seq(3, 1.0), seq(5, 2.0), seq(2, 3.0)});
  CHECK(three.length() == 10);
  CHECK(three.turn_boundaries == std::vector<Index>{0, 3, 8});
  CHECK(three.values(0, 0) == 1.0);
  CHECK(three.values(3, 0) == 2.0);
  CHECK(three.values(8, 0) == 3.0);

  const EmbeddingSequence reversed = concat_history({seq(2, 3.0), seq(5, 2.0), seq(3, 1.0)});
  CHECK(reversed.turn_boundaries == std::vector<Index>{0, 2, 7});
  CHECK(reversed.values(0, 0) == 3.0);
  CHECK(reversed.values.bottomRows(3) == three.values.topRows(3));

  CHECK_THROWS_AS(concat_history({}), ValidationError);
}

TEST_CASE("intra-turn attention treats turns independently") {
  AffectContextEncoder::Config cfg;
  cfg.feature_dim = 6;
  cfg.attention.model_dim = 8;
  cfg.attention.n_heads = 2;
  cfg.adapter.in_dim = 8;
  cfg.adapter.hidden_dim = 8;
  cfg.adapter.out_dim = 8;
  Rng rng(21);
  AffectContextEncoder enc;
  enc.init(cfg, rng);

  features::FeatureMatrix a, b;
  a.values = Matd::Random(5, 6);
  b.values = Matd::Random(7, 6);
  const Matd a_first = enc.intra_turn_attention(a).values;
  const Matd b_first = enc.intra_turn_attention(b).values;
  const Matd b_second = enc.intra_turn_attention(b).values;
  const Matd a_second = enc.intra_turn_attention(a).values;
  CHECK(bitwise_equal(a_first, a_second));
  CHECK(bitwise_equal(b_first, b_second));

  features::FeatureMatrix empty;
  empty.values = Matd(0, 6);
  CHECK_THROWS_AS(enc.intra_turn_attention(empty), ValidationError);
}

TEST_CASE("speech encoder: depth 0 is the identity, deterministic, length-preserving") {
  EmbeddingSequence seq;
  seq.values = Matd::Random(9, 8);
  seq.turn_boundaries = {0};
  const EmbeddingSequence out0 = speech_encoder(seq, {});
  CHECK(bitwise_equal(out0.values, seq.values));

  std::vector<nn::EncoderBlock> blocks(2);
  {
    Rng rng(33);
    blocks[0].init(8, 2, 16, rng);
    blocks[1].init(8, 2, 16, rng);
  }
  std::vector<nn::EncoderBlock> blocks_again(2);
  {
    Rng rng(33);
    blocks_again[0].init(8, 2, 16, rng);
    blocks_again[1].init(8, 2, 16, rng);
  }
  const EmbeddingSequence once = speech_encoder(seq, blocks);
  const EmbeddingSequence twice = speech_encoder(seq, blocks_again);
  CHECK(bitwise_equal(once.values, twice.values));

  for (Index l = 1; l <= 32; ++l) {
    EmbeddingSequence s;
    s.values = Matd::Random(l, 8);
    s.turn_boundaries = {0};
    CHECK(speech_encoder(s, blocks).length() == l);
  }
}

TEST_CASE("adapter geometry: 3000 -> 375 and 8 -> 1; factor 8 on multiples of 8") {
  AdapterConfig cfg;
  cfg.in_dim = 4;
  cfg.hidden_dim = 4;
  cfg.out_dim = 4;
  Rng rng(40);
  ModalityAdapter adapter;
  adapter.init(cfg, rng);

  CHECK(adapter.out_len(3000) == 375);
  CHECK(adapter.out_len(8) == 1);
  for (Index l = 8; l <= 128; l += 8) CHECK(adapter.out_len(l) == l / 8);

  const Matd big = Matd::Random(3000, 4);
  CHECK(adapter.forward(big).rows() == 375);
  const Matd small = Matd::Random(8, 4);
  CHECK(adapter.forward(small).rows() == 1);
}

TEST_CASE("adapter with zero bias maps zero input to zero output") {
  AdapterConfig cfg;
  cfg.in_dim = 3;
  cfg.hidden_dim = 5;
  cfg.out_dim = 4;
  Rng rng(41);
  ModalityAdapter adapter;
  adapter.init(cfg, rng);
  for (auto& layer : adapter.layers) layer.b.value.setZero();
  const Matd out = adapter.forward(Matd::Zero(16, 3));
  CHECK(out.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("a conv stack without padding rejects too-short sequences") {
  AdapterConfig cfg;
  cfg.in_dim = 3;
  cfg.hidden_dim = 3;
  cfg.out_dim = 3;
  cfg.padding = 0;
  Rng rng(42);
  ModalityAdapter adapter;
  adapter.init(cfg, rng);
  CHECK_THROWS_WITH_AS(adapter.forward(Matd::Ones(4, 3)), "sequence too short for adapter",
                       ValidationError);
}

TEST_CASE("inter-turn attention output depends on every historical turn") {
  AffectContextEncoder::Config cfg;
  cfg.feature_dim = 5;
  cfg.attention.model_dim = 8;
  cfg.attention.n_heads = 2;
  cfg.encoder_depth = 0;
  cfg.adapter.in_dim = 8;
  cfg.adapter.hidden_dim = 8;
  cfg.adapter.out_dim = 8;
  Rng rng(50);
  AffectContextEncoder enc;
  enc.init(cfg, rng);

  std::vector<features::FeatureMatrix> turns(3);
  for (auto& t : turns) t.values = Matd::Random(6, 5);
  const Matd base = enc.forward(turns).values;
  for (std::size_t k = 0; k < turns.size(); ++k) {
    auto perturbed = turns;
    perturbed[k].values(2, 1) += 0.05;
    const Matd changed = enc.forward(perturbed).values;
    CHECK((changed - base).cwiseAbs().maxCoeff() > 1e-6);
  }
}

TEST_CASE("analytic gradients match finite differences (attention + adapter)") {
  gradcheck::StandardSuite suite(1234);
  for (const auto& comp : suite.components()) {
    if (comp.name != "intra_turn_mhsa" && comp.name != "inter_turn_mhsa" &&
        comp.name != "modality_adapter")
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
