#include "graft/backbone.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace graft {

using ordered_json = nlohmann::ordered_json;

namespace {

constexpr int kWeightFileVersion = 1;

ad::ParamPtr make_xavier(const std::string& id, std::size_t rows, std::size_t cols,
                         std::mt19937_64& rng) {
  auto p = std::make_shared<ad::ParamTensor>(id, rows, cols);
  double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : p->values) v = dist(rng);
  return p;
}

ad::ParamPtr make_zeros(const std::string& id, std::size_t rows, std::size_t cols) {
  return std::make_shared<ad::ParamTensor>(id, rows, cols);
}

ad::ParamPtr clone_param(const ad::ParamPtr& p) {
  auto q = std::make_shared<ad::ParamTensor>(p->id, p->rows, p->cols, p->trainable);
  q->values = p->values;
  return q;
}

}  // namespace

Backbone::Backbone(const BackboneConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.L < 1) throw std::invalid_argument("backbone: L must be >= 1");
  if (cfg.d < 1 || cfg.d_in < 1 || cfg.T < 1) throw std::invalid_argument("backbone: bad dims");
  if (cfg.head_layers < 1 || cfg.head_layers > 4)
    throw std::invalid_argument("backbone: head_layers must be in [1, 4]");
  std::mt19937_64 rng(seed);
  input_w_ = make_xavier("backbone.input_w", cfg.d_in, cfg.d, rng);
  input_b_ = make_zeros("backbone.input_b", 1, cfg.d);
  for (int l = 1; l <= cfg.L; ++l) {
    std::string base = "backbone.layer" + std::to_string(l) + ".";
    GinLayerWeights lw;
    lw.edge_w = make_xavier(base + "edge_w", std::max(cfg.d_e, 0), cfg.d, rng);
    lw.edge_b = make_zeros(base + "edge_b", 1, cfg.d);
    lw.w1 = make_xavier(base + "w1", cfg.d, cfg.d, rng);
    lw.b1 = make_zeros(base + "b1", 1, cfg.d);
    lw.w2 = make_xavier(base + "w2", cfg.d, cfg.d, rng);
    lw.b2 = make_zeros(base + "b2", 1, cfg.d);
    layers_.push_back(std::move(lw));
  }
}

std::vector<ad::ParamPtr> Backbone::params() const {
  std::vector<ad::ParamPtr> out{input_w_, input_b_};
  for (const auto& lw : layers_) {
    out.push_back(lw.edge_w);
    out.push_back(lw.edge_b);
    out.push_back(lw.w1);
    out.push_back(lw.b1);
    out.push_back(lw.w2);
    out.push_back(lw.b2);
  }
  return out;
}

void Backbone::set_trainable(bool trainable) {
  for (const auto& p : params()) p->trainable = trainable;
}

Backbone Backbone::clone() const {
  Backbone out;
  out.cfg_ = cfg_;
  out.input_w_ = clone_param(input_w_);
  out.input_b_ = clone_param(input_b_);
  for (const auto& lw : layers_) {
    GinLayerWeights c;
    c.edge_w = clone_param(lw.edge_w);
    c.edge_b = clone_param(lw.edge_b);
    c.w1 = clone_param(lw.w1);
    c.b1 = clone_param(lw.b1);
    c.w2 = clone_param(lw.w2);
    c.b2 = clone_param(lw.b2);
    c.eps = lw.eps;
    out.layers_.push_back(std::move(c));
  }
  return out;
}

Head::Head(const BackboneConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (int i = 0; i < cfg.head_layers; ++i) {
    int in = cfg.d;
    int out = (i == cfg.head_layers - 1) ? cfg.T : cfg.d;
    std::string base = "head.l" + std::to_string(i + 1) + ".";
    ws_.push_back(make_xavier(base + "w", in, out, rng));
    bs_.push_back(make_zeros(base + "b", 1, out));
  }
}

std::vector<ad::ParamPtr> Head::params() const {
  std::vector<ad::ParamPtr> out;
  for (std::size_t i = 0; i < ws_.size(); ++i) {
    out.push_back(ws_[i]);
    out.push_back(bs_[i]);
  }
  return out;
}

void Head::set_trainable(bool trainable) {
  for (const auto& p : params()) p->trainable = trainable;
}

Head Head::clone() const {
  Head out;
  for (std::size_t i = 0; i < ws_.size(); ++i) {
    out.ws_.push_back(clone_param(ws_[i]));
    out.bs_.push_back(clone_param(bs_[i]));
  }
  return out;
}

ad::Value Head::forward(ad::Tape& t, ad::Value pooled) const {
  ad::Value x = pooled;
  for (std::size_t i = 0; i < ws_.size(); ++i) {
    x = ad::affine(t, x, ws_[i], bs_[i]);
    if (i + 1 < ws_.size()) x = relu(x);
  }
  return x;
}

ad::Value gin_layer(ad::Tape& t, ad::Value h, const LabeledGraph& g, ad::Value edge_feat,
                    const std::optional<ad::Value>& edge_weight, const GinLayerWeights& lw) {
  ad::Value msg = gather_rows(h, g.dir_src);
  ad::Value proj = ad::affine(t, edge_feat, lw.edge_w, lw.edge_b);
  msg = add(msg, proj);
  if (edge_weight) msg = scale_rows(msg, *edge_weight);
  ad::Value agg = scatter_add_rows(msg, g.dir_dst, static_cast<std::size_t>(g.num_nodes()));
  ad::Value pre = add(scale(h, 1.0 + lw.eps), agg);
  ad::Value hidden = relu(ad::affine(t, pre, lw.w1, lw.b1));
  return ad::affine(t, hidden, lw.w2, lw.b2);
}

ad::Value forward_logits(ad::Tape& t, const LabeledGraph& g, const Backbone& bb,
                         const Head& head, const NodePrompt* node_prompt,
                         const EdgePrompt* edge_prompt) {
  const auto& cfg = bb.config();
  const std::size_t n = static_cast<std::size_t>(g.num_nodes());
  const std::size_t m = static_cast<std::size_t>(g.num_directed_edges());
  ad::Value x = t.constant(n, cfg.d_in, g.node_feature_matrix());
  if (node_prompt && node_prompt->config().mode != PromptMode::none)
    x = node_prompt->apply(t, x);
  ad::Value edge_feat = t.constant(m, cfg.d_e, g.directed_edge_feature_matrix(cfg.d_e));

  ad::Value h = ad::affine(t, x, bb.input_w(), bb.input_b());
  ad::Value rep = x;  // representations feeding the layer's edge prompt
  for (int l = 1; l <= cfg.L; ++l) {
    std::optional<ad::Value> w;
    if (edge_prompt && edge_prompt->prompts_layer(l))
      w = edge_prompt->edge_weights(t, rep, g, edge_feat, l);
    h = gin_layer(t, h, g, edge_feat, w, bb.layer(l));
    for (double v : h.data())
      if (!std::isfinite(v))
        throw ad::numeric_error("non-finite node states after layer " + std::to_string(l));
    rep = h;
  }
  return head.forward(t, mean_rows(h));
}

std::vector<double> eval_logits(const LabeledGraph& g, const Backbone& bb, const Head& head,
                                const NodePrompt* node_prompt, const EdgePrompt* edge_prompt) {
  ad::Tape t;
  ad::Value logits = forward_logits(t, g, bb, head, node_prompt, edge_prompt);
  return logits.data();
}

namespace {

ordered_json tensor_to_json(const ad::ParamPtr& p) {
  ordered_json rows = ordered_json::array();
  for (std::size_t r = 0; r < p->rows; ++r) {
    ordered_json row = ordered_json::array();
    for (std::size_t c = 0; c < p->cols; ++c) row.push_back(p->values[r * p->cols + c]);
    rows.push_back(std::move(row));
  }
  return rows;
}

void tensor_from_json(const ordered_json& j, const ad::ParamPtr& p) {
  if (j.size() != p->rows)
    throw std::runtime_error("weight file: shape mismatch for tensor '" + p->id + "'");
  for (std::size_t r = 0; r < p->rows; ++r) {
    const auto& row = j[r];
    if (row.size() != p->cols)
      throw std::runtime_error("weight file: shape mismatch for tensor '" + p->id + "'");
    for (std::size_t c = 0; c < p->cols; ++c) p->values[r * p->cols + c] = row[c].get<double>();
  }
}

}  // namespace

std::string serialize_weights(const Backbone& bb, const Head& head) {
  const auto& cfg = bb.config();
  ordered_json j;
  j["version"] = kWeightFileVersion;
  j["config"] = {{"L", cfg.L},         {"d", cfg.d}, {"d_in", cfg.d_in},
                 {"d_e", cfg.d_e},     {"T", cfg.T}, {"head_layers", cfg.head_layers}};
  ordered_json tensors;
  for (const auto& p : bb.params()) tensors[p->id] = tensor_to_json(p);
  for (const auto& p : head.params()) tensors[p->id] = tensor_to_json(p);
  j["tensors"] = std::move(tensors);
  return j.dump();
}

void save_weights(const std::string& path, const Backbone& bb, const Head& head) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write '" + tmp + "'");
    f << serialize_weights(bb, head) << "\n";
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("cannot rename '" + tmp + "' to '" + path + "'");
}

std::pair<Backbone, Head> load_weights(const std::string& path,
                                       const std::optional<BackboneConfig>& expected) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open weight file '" + path + "'");
  ordered_json j;
  try {
    j = ordered_json::parse(f);
  } catch (const std::exception& e) {
    throw std::runtime_error("weight file '" + path + "': malformed JSON: " + e.what());
  }
  int version = j.value("version", -1);
  if (version != kWeightFileVersion)
    throw std::runtime_error("weight file version mismatch: file has version " +
                             std::to_string(version) + ", reader supports version " +
                             std::to_string(kWeightFileVersion));
  const auto& c = j.at("config");
  BackboneConfig cfg;
  cfg.L = c.at("L").get<int>();
  cfg.d = c.at("d").get<int>();
  cfg.d_in = c.at("d_in").get<int>();
  cfg.d_e = c.at("d_e").get<int>();
  cfg.T = c.at("T").get<int>();
  cfg.head_layers = c.at("head_layers").get<int>();
  if (expected) {
    if (expected->L != cfg.L)
      throw std::runtime_error("layer count mismatch: file has L=" + std::to_string(cfg.L) +
                               ", expected L=" + std::to_string(expected->L));
    if (!(*expected == cfg)) throw std::runtime_error("weight file config mismatch");
  }
  Backbone bb(cfg, 0);
  Head head(cfg, 0);
  const auto& tensors = j.at("tensors");
  for (const auto& p : bb.params()) {
    if (!tensors.contains(p->id))
      throw std::runtime_error("weight file: missing tensor '" + p->id + "'");
    tensor_from_json(tensors.at(p->id), p);
  }
  for (const auto& p : head.params()) {
    if (!tensors.contains(p->id))
      throw std::runtime_error("weight file: missing tensor '" + p->id + "'");
    tensor_from_json(tensors.at(p->id), p);
  }
  return {std::move(bb), std::move(head)};
}

}  // namespace graft
