// SPDX-License-Identifier: Apache-2.0
#include "empath/gradcheck.hpp"

#include <chrono>

#include "empath/affect.hpp"
#include "empath/fusion.hpp"
#include "empath/nn.hpp"
#include "json.hpp"

namespace empath::gradcheck {

ComponentResult check_component(const Component& component, double h, double tolerance) {
  const auto t0 = std::chrono::steady_clock::now();
  ComponentResult result;
  result.name = component.name;

  component.compute_gradients();
  std::vector<Matd> analytic;
  analytic.reserve(component.tensors.size());
  for (const auto& [name, t] : component.tensors) analytic.push_back(t->grad);

  for (std::size_t ti = 0; ti < component.tensors.size(); ++ti) {
    auto& [name, tensor] = component.tensors[ti];
    TensorResult tr;
    tr.name = name;
    for (Index r = 0; r < tensor->value.rows(); ++r) {
      for (Index c = 0; c < tensor->value.cols(); ++c) {
        const double saved = tensor->value(r, c);
        tensor->value(r, c) = saved + h;
        const double lp = component.loss();
        tensor->value(r, c) = saved - h;
        const double lm = component.loss();
        tensor->value(r, c) = saved;
        const double fd = (lp - lm) / (2.0 * h);
        const double an = analytic[ti](r, c);
        const double rel = std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
        tr.max_rel_err = std::max(tr.max_rel_err, rel);
      }
    }
    tr.pass = tr.max_rel_err <= tolerance;
    if (!tr.pass) result.pass = false;
    result.tensors.push_back(std::move(tr));
  }
  result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

Report run_all(const std::vector<Component>& components, double h, double tolerance) {
  Report report;
  report.tolerance = tolerance;
  for (const auto& c : components) {
    report.components.push_back(check_component(c, h, tolerance));
    if (!report.components.back().pass) report.pass = false;
  }
  return report;
}

std::string report_to_json(const Report& report) {
  nlohmann::json j;
  j["tolerance"] = report.tolerance;
  j["pass"] = report.pass;
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : report.components) {
    nlohmann::json jc;
    jc["name"] = c.name;
    jc["pass"] = c.pass;
    jc["seconds"] = c.seconds;
    nlohmann::json ts = nlohmann::json::array();
    for (const auto& t : c.tensors)
      ts.push_back({{"name", t.name}, {"max_rel_err", t.max_rel_err}, {"pass", t.pass}});
    jc["tensors"] = std::move(ts);
    comps.push_back(std::move(jc));
  }
  j["components"] = std::move(comps);
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// Standard suite fixtures
// ---------------------------------------------------------------------------

struct StandardSuite::Impl {
  // self-attention fixture (shared by the intra/inter components)
  nn::MultiHeadAttention intra;
  nn::MultiHeadAttention inter;
  Matd attn_x;
  Matd attn_c;  // fixed readout coefficients making the loss scalar

  // cross-attention fixture
  fusion::CrossModalFuser fuser;
  affect::EmbeddingSequence cross_q, cross_kv;
  Matd cross_c;

  // masked low-rank projection fixture
  nn::MaskedLowRankLinear plora;
  Matd plora_x;
  std::vector<char> plora_mask;
  Matd plora_c;

  // modality adapter fixture
  affect::ModalityAdapter adapter;
  Matd adapter_x;
  Matd adapter_c;

  // loss composites: params -> logits -> softmax -> loss
  nn::MaskedLowRankLinear ce_proj;
  Matd ce_x;
  std::vector<int> ce_targets;
  std::vector<char> ce_valid;

  nn::MaskedLowRankLinear kl_proj;
  Matd kl_x;
  Matd kl_teacher_logits;
  std::vector<char> kl_valid;
  double kl_temperature = 2.0;
};

StandardSuite::StandardSuite(std::uint64_t seed) : impl_(new Impl) {
  Rng rng(seed);
  Impl& im = *impl_;

  const Index L = 5, d = 8;
  im.intra.init(d, 2, rng);
  im.inter.init(d, 2, rng);
  im.attn_x.resize(L, d);
  uniform_fill(im.attn_x, rng, 1.0);
  im.attn_c.resize(L, d);
  uniform_fill(im.attn_c, rng, 1.0);

  im.fuser.init(d, 2, rng);
  im.cross_q.values.resize(3, d);
  uniform_fill(im.cross_q.values, rng, 1.0);
  im.cross_q.turn_boundaries = {0};
  im.cross_kv.values.resize(4, d);
  uniform_fill(im.cross_kv.values, rng, 1.0);
  im.cross_kv.modality = affect::Modality::Text;
  im.cross_kv.turn_boundaries = {0};
  im.cross_c.resize(3, d);
  uniform_fill(im.cross_c, rng, 1.0);

  im.plora.init(d, 6, rng);
  im.plora.attach_lora(3, 4.0, 0.0, rng);
  uniform_fill(im.plora.lora->up.value, rng, 0.5);  // zero-init would hide A's gradient
  im.plora_x.resize(4, d);
  uniform_fill(im.plora_x, rng, 1.0);
  im.plora_mask = {1, 0, 1, 1};
  im.plora_c.resize(4, 6);
  uniform_fill(im.plora_c, rng, 1.0);

  affect::AdapterConfig acfg;
  acfg.in_dim = 4;
  acfg.hidden_dim = 6;
  acfg.out_dim = 5;
  im.adapter.init(acfg, rng);
  im.adapter_x.resize(6, 4);
  uniform_fill(im.adapter_x, rng, 1.0);
  im.adapter_c.resize(im.adapter.out_len(6), 5);
  uniform_fill(im.adapter_c, rng, 1.0);

  const Index vocab = 8;
  im.ce_proj.init(6, vocab, rng);
  im.ce_x.resize(5, 6);
  uniform_fill(im.ce_x, rng, 1.0);
  im.ce_targets = {3, 1, 7, 0, 5};
  im.ce_valid = {1, 1, 0, 1, 1};

  im.kl_proj.init(6, vocab, rng);
  im.kl_x.resize(4, 6);
  uniform_fill(im.kl_x, rng, 1.0);
  im.kl_teacher_logits.resize(4, vocab);
  uniform_fill(im.kl_teacher_logits, rng, 2.0);
  im.kl_valid = {1, 0, 1, 1};

  // --- component closures -------------------------------------------------
  auto collect = [](auto& module, const std::string& prefix,
                    std::vector<std::pair<std::string, nn::Tensor*>>& out) {
    nn::ParamRegistry reg;
    module.register_params(reg, prefix);
    for (const auto& entry : reg.entries()) out.push_back(entry);
  };

  auto add_self_attn = [this, &collect](const std::string& name, nn::MultiHeadAttention& attn) {
    Impl& m = *impl_;
    Component comp;
    comp.name = name;
    collect(attn, name, comp.tensors);
    comp.loss = [&attn, &m]() {
      return attn.forward(m.attn_x, m.attn_x).cwiseProduct(m.attn_c).sum();
    };
    comp.compute_gradients = [&attn, &m]() {
      for (auto p : {&attn.proj_q, &attn.proj_k, &attn.proj_v, &attn.proj_o}) {
        p->w.zero_grad();
        p->b.zero_grad();
      }
      nn::MultiHeadAttention::Cache cache;
      attn.forward(m.attn_x, m.attn_x, &cache);
      attn.backward(cache, m.attn_c);
    };
    components_.push_back(std::move(comp));
  };
  add_self_attn("intra_turn_mhsa", im.intra);
  add_self_attn("inter_turn_mhsa", im.inter);

  {
    Component comp;
    comp.name = "cross_modal_attention";
    collect(im.fuser.attn, comp.name, comp.tensors);
    comp.loss = [&im]() {
      return im.fuser.forward(im.cross_q, im.cross_kv).values.cwiseProduct(im.cross_c).sum();
    };
    comp.compute_gradients = [&im]() {
      for (auto p : {&im.fuser.attn.proj_q, &im.fuser.attn.proj_k, &im.fuser.attn.proj_v,
                     &im.fuser.attn.proj_o}) {
        p->w.zero_grad();
        p->b.zero_grad();
      }
      fusion::CrossModalFuser::Cache cache;
      im.fuser.forward(im.cross_q, im.cross_kv, &cache);
      im.fuser.backward(cache, im.cross_c);
    };
    components_.push_back(std::move(comp));
  }

  {
    Component comp;
    comp.name = "partial_low_rank_projection";
    comp.tensors = {{"plora.w", &im.plora.w},
                    {"plora.b", &im.plora.b},
                    {"plora.lora_down", &im.plora.lora->down},
                    {"plora.lora_up", &im.plora.lora->up}};
    comp.loss = [&im]() {
      return im.plora.forward(im.plora_x, im.plora_mask).cwiseProduct(im.plora_c).sum();
    };
    comp.compute_gradients = [&im]() {
      im.plora.w.zero_grad();
      im.plora.b.zero_grad();
      im.plora.lora->down.zero_grad();
      im.plora.lora->up.zero_grad();
      nn::MaskedLowRankLinear::Cache cache;
      im.plora.forward(im.plora_x, im.plora_mask, &cache);
      im.plora.backward(cache, im.plora_c);
    };
    components_.push_back(std::move(comp));
  }

  {
    Component comp;
    comp.name = "modality_adapter";
    for (std::size_t i = 0; i < im.adapter.layers.size(); ++i) {
      comp.tensors.emplace_back("adapter.conv" + std::to_string(i) + ".w",
                                &im.adapter.layers[i].w);
      comp.tensors.emplace_back("adapter.conv" + std::to_string(i) + ".b",
                                &im.adapter.layers[i].b);
    }
    comp.loss = [&im]() {
      return im.adapter.forward(im.adapter_x).cwiseProduct(im.adapter_c).sum();
    };
    comp.compute_gradients = [&im]() {
      for (auto& layer : im.adapter.layers) {
        layer.w.zero_grad();
        layer.b.zero_grad();
      }
      affect::ModalityAdapter::Cache cache;
      im.adapter.forward(im.adapter_x, &cache);
      im.adapter.backward(cache, im.adapter_c);
    };
    components_.push_back(std::move(comp));
  }

  {
    Component comp;
    comp.name = "ce_loss_composite";
    comp.tensors = {{"ce.w", &im.ce_proj.w}, {"ce.b", &im.ce_proj.b}};
    comp.loss = [&im]() {
      const Matd probs = nn::softmax_rows(im.ce_proj.forward(im.ce_x));
      return fusion::ce_loss(probs, im.ce_targets, im.ce_valid);
    };
    comp.compute_gradients = [&im]() {
      im.ce_proj.w.zero_grad();
      im.ce_proj.b.zero_grad();
      nn::MaskedLowRankLinear::Cache cache;
      const Matd logits = im.ce_proj.forward(im.ce_x, {}, &cache);
      const Matd probs = nn::softmax_rows(logits);
      im.ce_proj.backward(cache, fusion::ce_grad_wrt_logits(probs, im.ce_targets, im.ce_valid));
    };
    components_.push_back(std::move(comp));
  }

  {
    Component comp;
    comp.name = "kl_loss_composite";
    comp.tensors = {{"kl.w", &im.kl_proj.w}, {"kl.b", &im.kl_proj.b}};
    comp.loss = [&im]() {
      const Matd logits = im.kl_proj.forward(im.kl_x);
      return fusion::kl_distill_loss(nn::softmax_rows(logits),
                                     nn::softmax_rows(im.kl_teacher_logits), im.kl_valid,
                                     im.kl_temperature);
    };
    comp.compute_gradients = [&im]() {
      im.kl_proj.w.zero_grad();
      im.kl_proj.b.zero_grad();
      nn::MaskedLowRankLinear::Cache cache;
      const Matd logits = im.kl_proj.forward(im.kl_x, {}, &cache);
      im.kl_proj.backward(cache,
                          fusion::kl_grad_wrt_student_logits(logits, im.kl_teacher_logits,
                                                             im.kl_valid, im.kl_temperature));
    };
    components_.push_back(std::move(comp));
  }
}

StandardSuite::~StandardSuite() { delete impl_; }

}  // namespace empath::gradcheck
