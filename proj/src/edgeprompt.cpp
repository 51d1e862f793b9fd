#include "graft/edgeprompt.hpp"

#include <array>
#include <stdexcept>

namespace graft {

EdgePlacement edge_placement_from_name(const std::string& name) {
  if (name == "off") return EdgePlacement::off;
  if (name == "shallow") return EdgePlacement::shallow;
  if (name == "deep") return EdgePlacement::deep;
  throw std::runtime_error("unknown edge placement '" + name + "'");
}

std::string edge_placement_name(EdgePlacement p) {
  switch (p) {
    case EdgePlacement::off: return "off";
    case EdgePlacement::shallow: return "shallow";
    case EdgePlacement::deep: return "deep";
  }
  throw std::logic_error("bad placement");
}

EdgePrompt::EdgePrompt(EdgePromptConfig cfg, std::uint64_t) : cfg_(cfg) {
  if (cfg_.placement == EdgePlacement::off) return;
  if (cfg_.layers < 1 || cfg_.d_in < 1 || cfg_.d < 1)
    throw std::invalid_argument("edge prompt: invalid dimensions");
  // alpha/beta start at zero, so the initial prompted graph is exactly the
  // degree-normalized adjacency (tau = 1/|N(i)|, t = 0).
  int n_layers = cfg_.placement == EdgePlacement::shallow ? 1 : cfg_.layers;
  for (int l = 1; l <= n_layers; ++l) {
    int dim = 2 * rep_width(l) + cfg_.d_e;
    alpha_.push_back(std::make_shared<ad::ParamTensor>(
        "edge_prompt.alpha_" + std::to_string(l), dim, 1));
    beta_.push_back(std::make_shared<ad::ParamTensor>(
        "edge_prompt.beta_" + std::to_string(l), dim, 1));
  }
}

bool EdgePrompt::prompts_layer(int layer) const {
  switch (cfg_.placement) {
    case EdgePlacement::off: return false;
    case EdgePlacement::shallow: return layer == 1;
    case EdgePlacement::deep: return layer >= 1 && layer <= cfg_.layers;
  }
  return false;
}

int EdgePrompt::param_index(int layer) const {
  if (!prompts_layer(layer)) throw std::logic_error("layer is not prompted");
  return layer - 1;
}

const ad::ParamPtr& EdgePrompt::alpha(int layer) const { return alpha_[param_index(layer)]; }
const ad::ParamPtr& EdgePrompt::beta(int layer) const { return beta_[param_index(layer)]; }

std::vector<ad::ParamPtr> EdgePrompt::params() const {
  std::vector<ad::ParamPtr> out;
  for (std::size_t i = 0; i < alpha_.size(); ++i) {
    out.push_back(alpha_[i]);
    out.push_back(beta_[i]);
  }
  return out;
}

ad::Value EdgePrompt::edge_weights(ad::Tape& t, ad::Value node_repr, const LabeledGraph& g,
                                   ad::Value edge_feat, int layer) const {
  const int idx = param_index(layer);
  if (static_cast<int>(node_repr.cols()) != rep_width(layer))
    throw std::invalid_argument("edge_weights: node representation width mismatch");
  ad::Value xd = gather_rows(node_repr, g.dir_dst);
  ad::Value xs = gather_rows(node_repr, g.dir_src);
  std::array<ad::Value, 3> parts{xd, xs, edge_feat};
  ad::Value cat = concat_cols(parts);
  ad::Value tau_logits = matmul(cat, t.param(alpha_[idx]));
  ad::Value tau = segment_softmax(tau_logits, g.dir_dst, g.num_nodes());
  if (cfg_.degree_compensation) {
    // multiply tau by the destination's in-degree: at zero init a^ = 1
    std::vector<int> deg(g.num_nodes(), 0);
    for (int d : g.dir_dst) ++deg[d];
    const std::size_t m = g.dir_dst.size();
    std::vector<double> per_edge(m);
    for (std::size_t e = 0; e < m; ++e)
      per_edge[e] = static_cast<double>(deg[g.dir_dst[e]]);
    tau = scale_rows(tau, t.constant(m, 1, std::move(per_edge)));
  }
  ad::Value shift = matmul(cat, t.param(beta_[idx]));
  // base weight a_ij = 1 for every present edge
  return add(tau, shift);
}

}  // namespace graft
