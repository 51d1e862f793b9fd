#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "graft/backbone.hpp"
#include "graft/graphdata.hpp"

using namespace graft;

namespace {

LabeledGraph make_graph(int n, const std::vector<std::pair<int, int>>& edges, int d_in, int d_e,
                        std::uint64_t seed = 3) {
  LabeledGraph g;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (int i = 0; i < n; ++i) {
    std::vector<double> f(d_in);
    for (double& v : f) v = dist(rng);
    g.node_features.push_back(std::move(f));
  }
  for (auto [a, b] : edges) {
    std::vector<double> f(d_e);
    for (double& v : f) v = dist(rng);
    g.edges.push_back({std::min(a, b), std::max(a, b), std::move(f)});
  }
  g.labels = {1};
  g.expand_directions();
  return g;
}

GinLayerWeights identity_layer(int d, int d_e) {
  GinLayerWeights lw;
  lw.edge_w = std::make_shared<ad::ParamTensor>("ew", d_e, d);
  lw.edge_b = std::make_shared<ad::ParamTensor>("eb", 1, d);
  lw.w1 = std::make_shared<ad::ParamTensor>("w1", d, d);
  lw.b1 = std::make_shared<ad::ParamTensor>("b1", 1, d);
  lw.w2 = std::make_shared<ad::ParamTensor>("w2", d, d);
  lw.b2 = std::make_shared<ad::ParamTensor>("b2", 1, d);
  for (int i = 0; i < d; ++i) {
    lw.w1->values[i * d + i] = 1.0;
    lw.w2->values[i * d + i] = 1.0;
  }
  return lw;
}

}  // namespace

TEST_CASE("gin_layer hand-checked cases") {
  const int d = 2, d_e = 1;
  GinLayerWeights lw = identity_layer(d, d_e);

  SUBCASE("isolated node keeps its state") {
    LabeledGraph g = make_graph(1, {}, d, d_e);
    ad::Tape t;
    ad::Value h = t.constant(1, d, {0.3, 0.7});
    ad::Value e = t.constant(0, d_e, {});
    auto out = gin_layer(t, h, g, e, std::nullopt, lw).data();
    CHECK(out == std::vector<double>{0.3, 0.7});
  }

  SUBCASE("two nodes sum self and neighbor") {
    LabeledGraph g = make_graph(2, {{0, 1}}, d, d_e);
    ad::Tape t;
    ad::Value h = t.constant(2, d, {1, 0, 0, 1});
    ad::Value e = t.constant(2, d_e, {0.0, 0.0});
    auto out = gin_layer(t, h, g, e, std::nullopt, lw).data();
    CHECK(out == std::vector<double>{1, 1, 1, 1});
  }

  SUBCASE("zero edge weights contribute nothing") {
    LabeledGraph g = make_graph(2, {{0, 1}}, d, d_e);
    ad::Tape t;
    ad::Value h = t.constant(2, d, {1, 0, 0, 1});
    ad::Value e = t.constant(2, d_e, {0.5, 0.5});
    ad::Value w = t.constant(2, 1, {0.0, 0.0});
    auto out = gin_layer(t, h, g, e, w, lw).data();
    CHECK(out == std::vector<double>{1, 0, 0, 1});
  }
}

TEST_CASE("forward logits equal the head bias when its last layer is zeroed") {
  BackboneConfig cfg{.L = 2, .d = 4, .d_in = 3, .d_e = 2, .T = 2, .head_layers = 2};
  Backbone bb(cfg, 1);
  Head head(cfg, 2);
  auto params = head.params();
  // zero last-layer weights, set bias
  auto w_last = params[params.size() - 2];
  auto b_last = params.back();
  std::fill(w_last->values.begin(), w_last->values.end(), 0.0);
  b_last->values = {0.25, -0.75};
  LabeledGraph g = make_graph(5, {{0, 1}, {1, 2}, {2, 3}, {0, 4}}, cfg.d_in, cfg.d_e);
  CHECK(eval_logits(g, bb, head) == std::vector<double>{0.25, -0.75});
}

TEST_CASE("graph-level logits are invariant under node permutation") {
  BackboneConfig cfg{.L = 3, .d = 8, .d_in = 3, .d_e = 2, .T = 1, .head_layers = 2};
  Backbone bb(cfg, 5);
  Head head(cfg, 6);
  LabeledGraph g = make_graph(7, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {5, 6}, {0, 6}, {1, 4}},
                              cfg.d_in, cfg.d_e);
  auto base = eval_logits(g, bb, head);

  std::mt19937_64 rng(17);
  std::vector<int> perm(7);
  std::iota(perm.begin(), perm.end(), 0);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    LabeledGraph pg;
    pg.node_features.resize(7);
    for (int i = 0; i < 7; ++i) pg.node_features[perm[i]] = g.node_features[i];
    for (const auto& e : g.edges) {
      int a = perm[e.a], b = perm[e.b];
      pg.edges.push_back({std::min(a, b), std::max(a, b), e.features});
    }
    pg.labels = g.labels;
    pg.expand_directions();
    CHECK(eval_logits(pg, bb, head) == base);
  }
}

TEST_CASE("batch independence: evaluating twice gives identical per-graph logits") {
  BackboneConfig cfg{.L = 2, .d = 4, .d_in = 3, .d_e = 2, .T = 1, .head_layers = 1};
  Backbone bb(cfg, 9);
  Head head(cfg, 10);
  LabeledGraph g = make_graph(4, {{0, 1}, {2, 3}}, cfg.d_in, cfg.d_e);
  CHECK(eval_logits(g, bb, head) == eval_logits(g, bb, head));
}

TEST_CASE("forward with isolated nodes stays finite") {
  BackboneConfig cfg{.L = 5, .d = 8, .d_in = 3, .d_e = 2, .T = 1, .head_layers = 2};
  Backbone bb(cfg, 12);
  Head head(cfg, 13);
  LabeledGraph g = make_graph(3, {}, cfg.d_in, cfg.d_e);
  for (double v : eval_logits(g, bb, head)) CHECK(std::isfinite(v));
}

TEST_CASE("weight file round trip reproduces logits bit-exactly") {
  BackboneConfig cfg{.L = 3, .d = 6, .d_in = 4, .d_e = 2, .T = 2, .head_layers = 3};
  Backbone bb(cfg, 21);
  Head head(cfg, 22);
  LabeledGraph probe = make_graph(6, {{0, 1}, {1, 2}, {3, 4}, {4, 5}, {0, 5}}, cfg.d_in, cfg.d_e);
  auto before = eval_logits(probe, bb, head);

  std::string path = "weights_roundtrip_test.json";
  save_weights(path, bb, head);
  auto [bb2, head2] = load_weights(path);
  CHECK(eval_logits(probe, bb2, head2) == before);
  std::remove(path.c_str());
}

TEST_CASE("weight file validation") {
  BackboneConfig cfg{.L = 5, .d = 4, .d_in = 3, .d_e = 2, .T = 1, .head_layers = 1};
  Backbone bb(cfg, 31);
  Head head(cfg, 32);
  std::string path = "weights_validation_test.json";
  save_weights(path, bb, head);

  SUBCASE("layer count mismatch") {
    BackboneConfig expect = cfg;
    expect.L = 3;
    try {
      load_weights(path, expect);
      FAIL("expected throw");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find("layer count mismatch") != std::string::npos);
    }
  }

  SUBCASE("unsupported version is an explicit error") {
    std::ifstream in(path);
    std::string contents((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    auto pos = contents.find("\"version\":1");
    REQUIRE(pos != std::string::npos);
    contents.replace(pos, 11, "\"version\":2");
    std::ofstream out(path, std::ios::binary);
    out << contents;
    out.close();
    try {
      load_weights(path);
      FAIL("expected throw");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find("version mismatch") != std::string::npos);
    }
  }
  std::remove(path.c_str());
}

TEST_CASE("zero edge weights reduce forward to a per-node MLP plus pooling") {
  BackboneConfig cfg{.L = 2, .d = 3, .d_in = 3, .d_e = 1, .T = 1, .head_layers = 1};
  Backbone bb(cfg, 41);
  Head head(cfg, 42);
  LabeledGraph g = make_graph(4, {{0, 1}, {1, 2}, {2, 3}}, cfg.d_in, cfg.d_e);

  // oracle: recompute per node ignoring edges entirely
  auto affine_row = [](const std::vector<double>& x, const ad::ParamPtr& w,
                       const ad::ParamPtr& b) {
    std::vector<double> out(w->cols, 0.0);
    for (std::size_t c = 0; c < w->cols; ++c) {
      double s = b->values[c];
      for (std::size_t r = 0; r < w->rows; ++r) s += x[r] * w->values[r * w->cols + c];
      out[c] = s;
    }
    return out;
  };
  std::vector<std::vector<double>> states;
  for (const auto& x : g.node_features) {
    auto h = affine_row(x, bb.input_w(), bb.input_b());
    for (int l = 1; l <= cfg.L; ++l) {
      auto hid = affine_row(h, bb.layer(l).w1, bb.layer(l).b1);
      for (double& v : hid) v = std::max(v, 0.0);
      h = affine_row(hid, bb.layer(l).w2, bb.layer(l).b2);
    }
    states.push_back(h);
  }
  std::vector<double> pooled(cfg.d, 0.0);
  for (const auto& s : states)
    for (int j = 0; j < cfg.d; ++j) pooled[j] += s[j] / states.size();
  auto expected = affine_row(pooled, head.w(0), head.b(0));

  // forced-zero weights via a tape forward with explicit zero edge weights
  ad::Tape t;
  ad::Value x = t.constant(4, cfg.d_in, g.node_feature_matrix());
  ad::Value e = t.constant(g.num_directed_edges(), cfg.d_e,
                           g.directed_edge_feature_matrix(cfg.d_e));
  ad::Value h = ad::affine(t, x, bb.input_w(), bb.input_b());
  ad::Value zero_w = t.constant(g.num_directed_edges(), 1,
                                std::vector<double>(g.num_directed_edges(), 0.0));
  for (int l = 1; l <= cfg.L; ++l) h = gin_layer(t, h, g, e, zero_w, bb.layer(l));
  auto got = head.forward(t, mean_rows(h)).data();

  REQUIRE(got.size() == expected.size());
  for (std::size_t i = 0; i < got.size(); ++i)
    CHECK(got[i] == doctest::Approx(expected[i]).epsilon(1e-12));
}
