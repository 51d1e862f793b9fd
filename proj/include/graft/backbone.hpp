#pragma once

// L-layer GIN-style message-passing backbone with edge features,
// mean-pool readout, classification head and versioned weight file I/O.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "graft/ad.hpp"
#include "graft/edgeprompt.hpp"
#include "graft/graphdata.hpp"
#include "graft/prompts.hpp"

namespace graft {

struct BackboneConfig {
  int L = 5;
  int d = 16;
  int d_in = 0;
  int d_e = 0;
  int T = 1;
  int head_layers = 2;  // must stay within [1, 4]

  bool operator==(const BackboneConfig&) const = default;
};

struct GinLayerWeights {
  ad::ParamPtr edge_w, edge_b;  // d_e x d, 1 x d
  ad::ParamPtr w1, b1;          // d x d, 1 x d
  ad::ParamPtr w2, b2;          // d x d, 1 x d
  double eps = 0.0;             // GIN self-weight, fixed (untrainable)
};

class Backbone {
 public:
  Backbone() = default;
  Backbone(const BackboneConfig& cfg, std::uint64_t seed);

  const BackboneConfig& config() const { return cfg_; }
  const GinLayerWeights& layer(int l) const { return layers_.at(l - 1); }  // 1-based
  const ad::ParamPtr& input_w() const { return input_w_; }
  const ad::ParamPtr& input_b() const { return input_b_; }

  std::vector<ad::ParamPtr> params() const;
  void set_trainable(bool trainable);
  Backbone clone() const;

 private:
  BackboneConfig cfg_;
  ad::ParamPtr input_w_, input_b_;  // d_in x d, 1 x d
  std::vector<GinLayerWeights> layers_;
};

class Head {
 public:
  Head() = default;
  Head(const BackboneConfig& cfg, std::uint64_t seed);

  std::vector<ad::ParamPtr> params() const;
  void set_trainable(bool trainable);
  Head clone() const;

  ad::Value forward(ad::Tape& t, ad::Value pooled) const;  // 1 x d -> 1 x T

  int layers() const { return static_cast<int>(ws_.size()); }
  const ad::ParamPtr& w(int i) const { return ws_.at(i); }
  const ad::ParamPtr& b(int i) const { return bs_.at(i); }

 private:
  std::vector<ad::ParamPtr> ws_, bs_;
};

// One message-passing step:
//   h'_i = MLP((1+eps)·h_i + Σ_{j∈N(i)} w_ij·(h_j + edge_proj(e_ij)))
// edge_weight, when present, holds the prompted â for this layer (m x 1).
ad::Value gin_layer(ad::Tape& t, ad::Value h, const LabeledGraph& g, ad::Value edge_feat,
                    const std::optional<ad::Value>& edge_weight, const GinLayerWeights& lw);

// Full forward: prompts (optional) -> L GIN layers (edge weights per
// placement) -> mean pooling -> head logits (1 x T).
ad::Value forward_logits(ad::Tape& t, const LabeledGraph& g, const Backbone& bb,
                         const Head& head, const NodePrompt* node_prompt = nullptr,
                         const EdgePrompt* edge_prompt = nullptr);

// Non-taped convenience evaluation.
std::vector<double> eval_logits(const LabeledGraph& g, const Backbone& bb, const Head& head,
                                const NodePrompt* node_prompt = nullptr,
                                const EdgePrompt* edge_prompt = nullptr);

// Versioned JSON weight file holding backbone + head tensors.
std::string serialize_weights(const Backbone& bb, const Head& head);
void save_weights(const std::string& path, const Backbone& bb, const Head& head);
std::pair<Backbone, Head> load_weights(const std::string& path,
                                       const std::optional<BackboneConfig>& expected = {});

}  // namespace graft
