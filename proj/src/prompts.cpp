#include "graft/prompts.hpp"

#include <random>
#include <stdexcept>

namespace graft {

PromptMode prompt_mode_from_name(const std::string& name) {
  if (name == "none") return PromptMode::none;
  if (name == "gpf") return PromptMode::gpf;
  if (name == "gpf_plus") return PromptMode::gpf_plus;
  if (name == "gspf") return PromptMode::gspf;
  throw std::runtime_error("unknown prompt mode '" + name + "'");
}

std::string prompt_mode_name(PromptMode m) {
  switch (m) {
    case PromptMode::none: return "none";
    case PromptMode::gpf: return "gpf";
    case PromptMode::gpf_plus: return "gpf_plus";
    case PromptMode::gspf: return "gspf";
  }
  throw std::logic_error("bad mode");
}

NodePrompt::NodePrompt(NodePromptConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg_.mode == PromptMode::none) return;
  if (cfg_.d_in < 1) throw std::invalid_argument("node prompt: d_in must be positive");
  if (cfg_.k < 1) throw std::invalid_argument("node prompt: k must be >= 1");
  if (cfg_.mode == PromptMode::gpf && cfg_.k != 1)
    throw std::invalid_argument("gpf uses a single shared prompt vector (k must be 1)");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> init(-0.01, 0.01);
  auto fill = [&](ad::ParamPtr& p) {
    for (double& v : p->values) v = init(rng);
  };

  basis_ = std::make_shared<ad::ParamTensor>("node_prompt.basis", cfg_.k, cfg_.d_in);
  fill(basis_);
  if (cfg_.mode == PromptMode::gpf_plus ||
      (cfg_.mode == PromptMode::gspf && cfg_.learnable_attention)) {
    attn_ = std::make_shared<ad::ParamTensor>("node_prompt.attn", cfg_.k, cfg_.d_in);
    fill(attn_);
  }
  if (cfg_.mode == PromptMode::gspf) {
    gate_w_ = std::make_shared<ad::ParamTensor>("node_prompt.gate_w", cfg_.d_in, 1);
    fill(gate_w_);
    gate_b_ = std::make_shared<ad::ParamTensor>("node_prompt.gate_b", 1, 1);
    // bias 0: the gate starts at 0.5
  }
}

std::vector<ad::ParamPtr> NodePrompt::params() const {
  std::vector<ad::ParamPtr> out;
  if (basis_) out.push_back(basis_);
  if (attn_) out.push_back(attn_);
  if (gate_w_) out.push_back(gate_w_);
  if (gate_b_) out.push_back(gate_b_);
  return out;
}

ad::Value NodePrompt::gate(ad::Tape& t, ad::Value x) const {
  if (cfg_.mode != PromptMode::gspf) throw std::logic_error("gate: not in gspf mode");
  if (cfg_.fixed_gate) {
    return t.constant(x.rows(), 1, std::vector<double>(x.rows(), *cfg_.fixed_gate));
  }
  return sigmoid(ad::affine(t, x, gate_w_, gate_b_));
}

ad::Value NodePrompt::assign(ad::Tape& t, ad::Value x) const {
  ad::Value basis = t.param(basis_);
  ad::Value logits;
  if (cfg_.mode == PromptMode::gpf_plus ||
      (cfg_.mode == PromptMode::gspf && cfg_.learnable_attention)) {
    logits = matmul_nt(x, t.param(attn_));
  } else {
    logits = matmul_nt(x, basis);  // parameter-free attention
  }
  ad::Value weights = row_softmax(logits);  // n x k
  return matmul(weights, basis);            // n x d_in
}

ad::Value NodePrompt::apply(ad::Tape& t, ad::Value x) const {
  switch (cfg_.mode) {
    case PromptMode::none:
      return x;
    case PromptMode::gpf:
      return add_row_broadcast(x, t.param(basis_));
    case PromptMode::gpf_plus:
      return add(x, assign(t, x));
    case PromptMode::gspf:
      return add(x, scale_rows(assign(t, x), gate(t, x)));
  }
  throw std::logic_error("bad mode");
}

}  // namespace graft
