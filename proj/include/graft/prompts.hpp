#pragma once

// Node-prompt family: GPF, GPF-plus and the selective (gated,
// parameter-free attention) node prompt.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "graft/ad.hpp"

namespace graft {

enum class PromptMode { none, gpf, gpf_plus, gspf };

PromptMode prompt_mode_from_name(const std::string& name);
std::string prompt_mode_name(PromptMode m);

struct NodePromptConfig {
  PromptMode mode = PromptMode::none;
  int k = 1;      // gpf forces k = 1
  int d_in = 0;
  // Off by default: use the learnable-attention assignment (a_j^T x) instead
  // of the parameter-free one (p_j^T x) in gspf mode.
  bool learnable_attention = false;
  // Diagnostic override: when set, the gate output is this constant instead
  // of sigmoid(gate(x)).
  std::optional<double> fixed_gate;
};

class NodePrompt {
 public:
  NodePrompt() = default;
  NodePrompt(NodePromptConfig cfg, std::uint64_t seed);

  const NodePromptConfig& config() const { return cfg_; }

  // Trainable parameters in deterministic order.
  std::vector<ad::ParamPtr> params() const;

  // X is n x d_in. Returns the prompted feature matrix X̂ (same shape).
  ad::Value apply(ad::Tape& t, ad::Value x) const;

  // Exposed pieces for direct testing.
  ad::Value gate(ad::Tape& t, ad::Value x) const;    // n x 1, gspf only
  ad::Value assign(ad::Tape& t, ad::Value x) const;  // n x d_in prompt rows

  const ad::ParamPtr& basis() const { return basis_; }
  const ad::ParamPtr& attn() const { return attn_; }
  const ad::ParamPtr& gate_w() const { return gate_w_; }
  const ad::ParamPtr& gate_b() const { return gate_b_; }

 private:
  NodePromptConfig cfg_;
  ad::ParamPtr basis_;   // k x d_in
  ad::ParamPtr attn_;    // k x d_in (gpf_plus)
  ad::ParamPtr gate_w_;  // d_in x 1 (gspf)
  ad::ParamPtr gate_b_;  // 1 x 1 (gspf)
};

}  // namespace graft
