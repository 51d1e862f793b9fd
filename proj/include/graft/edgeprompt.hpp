#pragma once

// Selective edge prompt: per-layer reweighting â_ij = τ_ij·a_ij + t_ij with
// attention τ normalized over each destination node's in-edges.

#include <cstdint>
#include <string>
#include <vector>

#include "graft/ad.hpp"
#include "graft/graphdata.hpp"

namespace graft {

enum class EdgePlacement { off, shallow, deep };

EdgePlacement edge_placement_from_name(const std::string& name);
std::string edge_placement_name(EdgePlacement p);

struct EdgePromptConfig {
  EdgePlacement placement = EdgePlacement::off;
  int layers = 0;  // backbone depth L
  int d_in = 0;    // node feature width at layer 1
  int d = 0;       // hidden width at deeper layers
  int d_e = 0;
  // scale tau by |N(i)| so at zero init the prompted weights match the plain
  // unit edge weights instead of the degree-normalized adjacency
  bool degree_compensation = false;
};

class EdgePrompt {
 public:
  EdgePrompt() = default;
  EdgePrompt(EdgePromptConfig cfg, std::uint64_t seed);

  const EdgePromptConfig& config() const { return cfg_; }
  bool prompts_layer(int layer) const;  // layer is 1-based
  int rep_width(int layer) const { return layer == 1 ? cfg_.d_in : cfg_.d; }

  std::vector<ad::ParamPtr> params() const;

  // node_repr: n x d_x representations entering `layer`; returns the m x 1
  // prompted weights â over the graph's directed edges. Concatenation order
  // is [x_dst || x_src || e].
  ad::Value edge_weights(ad::Tape& t, ad::Value node_repr, const LabeledGraph& g,
                         ad::Value edge_feat, int layer) const;

  const ad::ParamPtr& alpha(int layer) const;
  const ad::ParamPtr& beta(int layer) const;

 private:
  int param_index(int layer) const;
  EdgePromptConfig cfg_;
  std::vector<ad::ParamPtr> alpha_;  // one per prompted layer, (2*d_x+d_e) x 1
  std::vector<ad::ParamPtr> beta_;
};

}  // namespace graft
