// End-to-end acceptance checks. Each criterion prints a single PASS/FAIL
// line; the process exits non-zero if any of them fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <random>
#include <sstream>
#include <vector>

#include "graft/backbone.hpp"
#include "graft/eval.hpp"
#include "graft/gradcheck.hpp"
#include "graft/graphdata.hpp"
#include "graft/metrics.hpp"
#include "graft/trainer.hpp"

using namespace graft;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& detail) {
  std::cout << "criterion " << criterion << ": " << (pass ? "PASS" : "FAIL") << " — " << detail
            << std::endl;
  if (!pass) ++g_failures;
}

LabeledGraph random_graph(int n, int d_in, int d_e, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> feat(-1.0, 1.0);
  LabeledGraph g;
  for (int i = 0; i < n; ++i) {
    std::vector<double> x(d_in);
    for (double& v : x) v = feat(rng);
    g.node_features.push_back(std::move(x));
  }
  // random spanning tree plus a few chords
  for (int i = 1; i < n; ++i) {
    int j = std::uniform_int_distribution<int>(0, i - 1)(rng);
    std::vector<double> e(d_e);
    for (double& v : e) v = feat(rng);
    g.edges.push_back({j, i, std::move(e)});
  }
  std::uniform_int_distribution<int> pick(0, n - 1);
  for (int extra = 0; extra < n / 2; ++extra) {
    int a = pick(rng), b = pick(rng);
    if (a == b) continue;
    if (a > b) std::swap(a, b);
    bool dup = false;
    for (const auto& e : g.edges) dup = dup || (e.a == a && e.b == b);
    if (dup) continue;
    std::vector<double> e(d_e);
    for (double& v : e) v = feat(rng);
    g.edges.push_back({a, b, std::move(e)});
  }
  g.labels = {1};
  g.expand_directions();
  return g;
}

// ---------------------------------------------------------------- criterion 1

void criterion_gradients() {
  auto t0 = std::chrono::steady_clock::now();
  const int d_in = 6, d_e = 4;
  LabeledGraph g = random_graph(6, d_in, d_e, 7);
  BackboneConfig bcfg{.L = 5, .d = 8, .d_in = d_in, .d_e = d_e, .T = 1, .head_layers = 2};
  Backbone bb(bcfg, 11);
  bb.set_trainable(false);

  double worst = 0.0;
  bool all_ok = true;
  std::string first_fail;
  for (TuneMode mode : {TuneMode::gpf, TuneMode::gpf_plus, TuneMode::gspf}) {
    for (EdgePlacement edge : {EdgePlacement::off, EdgePlacement::shallow, EdgePlacement::deep}) {
      TuneConfig cfg;
      cfg.mode = mode;
      cfg.k = mode == TuneMode::gpf ? 1 : 3;
      cfg.edge = edge;
      PromptState st = make_prompt_state(cfg, bcfg, 3);
      std::mt19937_64 rng(91);
      std::uniform_real_distribution<double> nudge(-0.3, 0.3);
      for (const auto& p : st.edge_prompt.params())
        for (double& v : p->values) v = nudge(rng);
      const NodePrompt* np =
          st.node_prompt.config().mode != PromptMode::none ? &st.node_prompt : nullptr;
      const EdgePrompt* ep =
          st.edge_prompt.config().placement != EdgePlacement::off ? &st.edge_prompt : nullptr;
      auto params = st.trainable_params();
      auto loss_fn = [&](bool with_grad) {
        ad::Tape t;
        ad::Value loss = masked_bce(forward_logits(t, g, bb, st.head, np, ep), g.labels);
        if (with_grad) t.backward(loss);
        return loss.scalar();
      };
      FdReport rep = fd_check(loss_fn, params, 1e-5, 1e-4);
      worst = std::max(worst, rep.max_rel_err);
      if (!rep.passed() || rep.max_rel_err >= 1e-4) {
        all_ok = false;
        if (first_fail.empty())
          first_fail = tune_mode_name(mode) + "/" + edge_placement_name(edge);
      }
    }
  }
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ostringstream os;
  os << "9 mode/placement combinations, max relative error " << worst << " (< 1e-4), " << secs
     << " s";
  if (!all_ok) os << ", first failing combo: " << first_fail;
  report(1, all_ok && secs < 30.0, os.str());
}

// ---------------------------------------------------------------- criterion 2

void criterion_reductions() {
  const int d_in = 6, d_e = 4;
  BackboneConfig bcfg{.L = 3, .d = 8, .d_in = d_in, .d_e = d_e, .T = 1, .head_layers = 2};
  Backbone bb(bcfg, 21);
  Head head(bcfg, 22);

  bool gspf_eq = true, plus_eq = true, edge_eq = true;
  for (std::uint64_t gs = 0; gs < 5; ++gs) {
    LabeledGraph g = random_graph(8, d_in, d_e, 100 + gs);

    NodePrompt gpf({.mode = PromptMode::gpf, .k = 1, .d_in = d_in}, 5);
    NodePrompt gspf1({.mode = PromptMode::gspf, .k = 1, .d_in = d_in, .fixed_gate = 1.0}, 5);
    NodePrompt plus1({.mode = PromptMode::gpf_plus, .k = 1, .d_in = d_in}, 5);
    std::vector<double> base = eval_logits(g, bb, head, &gpf);
    gspf_eq = gspf_eq && eval_logits(g, bb, head, &gspf1) == base;
    plus_eq = plus_eq && eval_logits(g, bb, head, &plus1) == base;

    EdgePrompt off({.placement = EdgePlacement::off}, 0);
    edge_eq = edge_eq && eval_logits(g, bb, head, nullptr, &off) == eval_logits(g, bb, head);
  }
  std::ostringstream os;
  os << "bit-level logit equality on 5 random graphs: selective(k=1, gate=1, edge off) == "
     << (gspf_eq ? "single-vector prompt" : "MISMATCH")
     << "; attention(k=1) == " << (plus_eq ? "single-vector prompt" : "MISMATCH")
     << "; edge prompt off == " << (edge_eq ? "plain forward" : "MISMATCH");
  report(2, gspf_eq && plus_eq && edge_eq, os.str());
}

// ---------------------------------------------------------------- criterion 3

void criterion_param_counts() {
  ParamCountConfig base{.d_in = 300, .d = 300, .d_e = 300, .L = 5};
  bool ok = true;
  std::ostringstream os;

  ParamCountConfig gpf = base;
  gpf.mode = TuneMode::gpf;
  gpf.k = 1;
  long long gpf_total = count_params(gpf).total;
  ok = ok && gpf_total == 300;
  os << "single-vector prompt = " << gpf_total << "; ";

  long long plus_lo = 0, plus_hi = 0;
  {
    ParamCountConfig c = base;
    c.mode = TuneMode::gpf_plus;
    c.k = 5;
    plus_lo = count_params(c).total;
    c.k = 20;
    plus_hi = count_params(c).total;
  }
  ok = ok && plus_lo == 3000 && plus_hi == 12000;
  os << "attention prompt in [" << plus_lo << ", " << plus_hi << "]; ";

  long long sel_lo = 0, sel_hi = 0;
  {
    ParamCountConfig c = base;
    c.mode = TuneMode::gspf;
    c.edge = EdgePlacement::deep;
    c.k = 1;
    sel_lo = count_params(c).total;
    c.k = 20;
    sel_hi = count_params(c).total;
  }
  // k*300 + 301 (gate) + 9000 (edges): 9601 at k=1, 15301 at k=20. The
  // published ~9.3-15k band is matched to within one basis vector.
  ok = ok && sel_lo == 9601 && sel_hi == 15301;
  ok = ok && sel_lo >= 9301 && sel_hi <= 15301;
  os << "selective prompt in [" << sel_lo << ", " << sel_hi << "] (band ~9.3-15k); ";

  // symbolic formula == scalars the optimizer actually updates
  bool runtime_ok = true;
  BackboneConfig bcfg{.L = 5, .d = 300, .d_in = 300, .d_e = 300, .T = 1, .head_layers = 2};
  for (int k : {1, 5, 20}) {
    for (auto [mode, edge] :
         {std::pair{TuneMode::gpf_plus, EdgePlacement::off},
          std::pair{TuneMode::gspf, EdgePlacement::deep},
          std::pair{TuneMode::gspf, EdgePlacement::shallow}}) {
      TuneConfig tc;
      tc.mode = mode;
      tc.k = k;
      tc.edge = edge;
      ParamCountConfig pc;
      pc.mode = mode;
      pc.k = k;
      pc.edge = edge;
      pc.d_in = 300;
      pc.d = 300;
      pc.d_e = 300;
      pc.L = 5;
      runtime_ok = runtime_ok && count_params(pc).total == runtime_prompt_param_count(tc, bcfg);
    }
  }
  {
    TuneConfig tc;
    tc.mode = TuneMode::gpf;
    tc.k = 1;
    ParamCountConfig pc = base;
    pc.mode = TuneMode::gpf;
    pc.k = 1;
    runtime_ok = runtime_ok && count_params(pc).total == runtime_prompt_param_count(tc, bcfg);
  }
  ok = ok && runtime_ok;
  os << "runtime trainable-scalar count " << (runtime_ok ? "==" : "!=") << " formula";
  report(3, ok, os.str());
}

// ---------------------------------------------------------------- criterion 4

void criterion_frozen_backbone() {
  Dataset ds = generate_synthetic(SyntheticTask::triangle_detect, 60, 3);
  BackboneConfig bcfg{.L = 3, .d = 8, .d_in = ds.d_in, .d_e = ds.d_e, .T = ds.T,
                      .head_layers = 2};
  Backbone bb(bcfg, 31);
  Head pre_head(bcfg, 32);

  std::string path = "acceptance_weights.json";
  save_weights(path, bb, pre_head);
  auto [loaded, head2] = load_weights(path);
  loaded.set_trainable(false);
  std::string before = backbone_hash(loaded);

  TuneConfig cfg;
  cfg.mode = TuneMode::gspf;
  cfg.k = 2;
  cfg.edge = EdgePlacement::deep;
  cfg.epochs = 50;
  cfg.seeds = {0};
  TuneResult res = tune(ds, loaded, cfg);
  std::string after = backbone_hash(loaded);
  std::remove(path.c_str());

  bool ok = res.report.seeds[0].ok && before == after &&
            res.report.backbone_hash_before == res.report.backbone_hash_after;
  report(4, ok,
         "50 epochs of selective-prompt tuning; backbone hash " + before +
             (ok ? " unchanged" : " CHANGED to " + after));
}

// ---------------------------------------------------------------- criterion 5

void criterion_normalization() {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> logit(-30.0, 30.0);
  const int d_in = 6, d_e = 4;
  bool sums_ok = true, gate_ok = true;
  double worst_sum = 0.0;

  NodePrompt np({.mode = PromptMode::gspf, .k = 4, .d_in = d_in}, 43);
  NodePrompt plus({.mode = PromptMode::gpf_plus, .k = 4, .d_in = d_in}, 44);
  for (double& v : np.basis()->values) v = logit(rng) / 10.0;
  for (double& v : plus.attn()->values) v = logit(rng) / 10.0;
  for (double& v : np.gate_w()->values) v = logit(rng) / 10.0;

  EdgePrompt ep({.placement = EdgePlacement::shallow, .layers = 1, .d_in = d_in, .d = 8,
                 .d_e = d_e},
                0);
  for (double& v : ep.alpha(1)->values) v = logit(rng) / 10.0;

  for (int inst = 0; inst < 1000; ++inst) {
    // node-prompt attention rows (both the parameter-free and learnable forms)
    ad::Tape t;
    int n = 2 + inst % 7;
    std::vector<double> xv(n * d_in);
    for (double& v : xv) v = logit(rng) / 10.0;
    ad::Value x = t.constant(n, d_in, xv);
    for (const NodePrompt* p : {&np, &plus}) {
      ad::Value logits = p->attn() ? matmul_nt(x, t.param(p->attn()))
                                   : matmul_nt(x, t.param(p->basis()));
      auto w = row_softmax(logits).data();
      for (int r = 0; r < n; ++r) {
        double s = 0.0;
        for (int j = 0; j < 4; ++j) s += w[r * 4 + j];
        worst_sum = std::max(worst_sum, std::abs(s - 1.0));
      }
    }
    // gate range
    auto r = np.gate(t, x).data();
    for (double v : r) gate_ok = gate_ok && v > 0.0 && v < 1.0;

    // per-destination edge attention
    LabeledGraph g = random_graph(n + 1, d_in, d_e, 500 + inst);
    ad::Tape t2;
    ad::Value xg = t2.constant(g.num_nodes(), d_in, g.node_feature_matrix());
    ad::Value eg =
        t2.constant(g.num_directed_edges(), d_e, g.directed_edge_feature_matrix(d_e));
    ad::Value cat_tau = ep.edge_weights(t2, xg, g, eg, 1);  // beta = 0, so this is tau
    auto tau = cat_tau.data();
    std::vector<double> mass(g.num_nodes(), 0.0);
    for (int i = 0; i < g.num_directed_edges(); ++i) mass[g.dir_dst[i]] += tau[i];
    for (int i = 0; i < g.num_nodes(); ++i)
      if (mass[i] != 0.0) worst_sum = std::max(worst_sum, std::abs(mass[i] - 1.0));
  }
  sums_ok = worst_sum < 1e-12;
  std::ostringstream os;
  os << "1000 instances: softmax sums within " << worst_sum << " of 1 (< 1e-12); gate "
     << (gate_ok ? "always in (0,1)" : "LEFT (0,1)");
  report(5, sums_ok && gate_ok, os.str());
}

// ----------------------------------------------------------- criteria 6 and 7

struct ModeResult {
  std::string name;
  double mean = 0.0;
  double stdev = 0.0;
};

ModeResult run_mode(const Dataset& ds, const Backbone& bb, const std::string& name,
                    TuneConfig cfg) {
  TuneResult res = tune(ds, bb, cfg);
  for (const auto& s : res.report.seeds)
    if (!s.ok) throw std::runtime_error(name + " seed failed: " + s.error);
  return {name, res.report.mean_test_auc, res.report.std_test_auc};
}

void criteria_transfer(bool& c7_pass, std::string& c7_detail) {
  auto t0 = std::chrono::steady_clock::now();

  Dataset source = generate_synthetic(SyntheticTask::triangle_detect, 2000, 1);
  Dataset target = generate_synthetic(SyntheticTask::degree_parity, 500, 2);

  PretrainConfig pc;
  pc.backbone = {.L = 5, .d = 16, .d_in = source.d_in, .d_e = source.d_e, .T = source.T,
                 .head_layers = 2};
  pc.epochs = 20;
  pc.seed = 0;
  PretrainResult pre = pretrain(source, pc);

  TuneConfig base;
  base.k = 5;
  base.lr = 1e-3;
  base.weight_decay = 1e-5;
  base.epochs = 50;
  base.head_layers = 1;
  base.seeds = {0, 1, 2, 3, 4};

  auto cfg_for = [&](TuneMode mode, EdgePlacement edge, bool np_on) {
    TuneConfig c = base;
    c.mode = mode;
    c.edge = edge;
    c.node_prompt_on = np_on;
    if (mode == TuneMode::gpf) c.k = 1;
    return c;
  };

  ModeResult probe =
      run_mode(target, pre.backbone, "linear_probe",
               cfg_for(TuneMode::linear_probe, EdgePlacement::off, true));
  ModeResult gpf = run_mode(target, pre.backbone, "gpf",
                            cfg_for(TuneMode::gpf, EdgePlacement::off, true));
  ModeResult gpf_plus = run_mode(target, pre.backbone, "gpf_plus",
                                 cfg_for(TuneMode::gpf_plus, EdgePlacement::off, true));
  ModeResult np_only = run_mode(target, pre.backbone, "np_only",
                                cfg_for(TuneMode::gspf, EdgePlacement::off, true));
  ModeResult ep_only = run_mode(target, pre.backbone, "ep_only",
                                cfg_for(TuneMode::gspf, EdgePlacement::deep, false));
  ModeResult both_deep = run_mode(target, pre.backbone, "np+ep deep",
                                  cfg_for(TuneMode::gspf, EdgePlacement::deep, true));
  ModeResult both_shallow = run_mode(target, pre.backbone, "np+ep shallow",
                                     cfg_for(TuneMode::gspf, EdgePlacement::shallow, true));

  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::ostringstream table;
  table.precision(4);
  table << std::fixed;
  for (const auto& m : {probe, gpf, gpf_plus, np_only, ep_only, both_deep, both_shallow})
    table << "    " << m.name << ": " << m.mean << " +- " << m.stdev << "\n";
  std::cout << "  transfer experiment (triangle-detect -> degree-parity, 5 seeds, " << secs
            << " s):\n"
            << table.str();

  bool margins = true;
  std::ostringstream os;
  for (const auto& m : {gpf, gpf_plus, both_deep})
    if (m.mean < probe.mean + 0.02) {
      margins = false;
      os << m.name << " not > probe+0.02 (" << m.mean << " vs " << probe.mean << "); ";
    }
  double best_single = std::max(np_only.mean, ep_only.mean);
  if (both_deep.mean < best_single - 0.01) {
    margins = false;
    os << "np+ep " << both_deep.mean << " < max(np, ep) - 0.01 = " << best_single - 0.01 << "; ";
  }
  if (margins) os << "all prompt modes beat the probe by >= 0.02 and np+ep >= max(np, ep) - 0.01";
  os << "; runtime " << secs << " s (< 900)";
  report(6, margins && secs < 900.0, os.str());

  c7_pass = both_deep.mean >= both_shallow.mean - 0.01;
  std::ostringstream os7;
  os7 << "deep " << both_deep.mean << " vs shallow " << both_shallow.mean
      << " (deep >= shallow - 0.01)";
  c7_detail = os7.str();
}

// ---------------------------------------------------------------- criterion 8

void criterion_auc_oracle() {
  std::mt19937_64 rng(71);
  std::uniform_real_distribution<double> sdist(0.0, 1.0);
  std::uniform_int_distribution<int> ldist(0, 1);
  std::uniform_int_distribution<int> ndist(2, 50);
  std::uniform_int_distribution<int> qdist(0, 9);
  int mismatches = 0, defined = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    int n = ndist(rng);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    bool quantize = trial % 2 == 0;
    int pos = 0;
    for (int i = 0; i < n; ++i) {
      scores[i] = quantize ? qdist(rng) / 10.0 : sdist(rng);
      labels[i] = ldist(rng);
      pos += labels[i];
    }
    auto got = roc_auc(scores, labels);
    if (pos == 0 || pos == n) {
      if (got.has_value()) ++mismatches;
      continue;
    }
    ++defined;
    double num = 0.0;
    long long pairs = 0;
    for (int i = 0; i < n; ++i) {
      if (labels[i] != 1) continue;
      for (int j = 0; j < n; ++j) {
        if (labels[j] != 0) continue;
        ++pairs;
        if (scores[i] > scores[j]) num += 1.0;
        else if (scores[i] == scores[j]) num += 0.5;
      }
    }
    if (!got || *got != num / pairs) ++mismatches;
  }
  std::ostringstream os;
  os << "10000 randomized instances (size <= 50, " << defined
     << " with both classes): " << mismatches << " deviations from the exhaustive pairwise count";
  report(8, mismatches == 0, os.str());
}

// ---------------------------------------------------------------- criterion 9

void criterion_determinism() {
  Dataset ds = generate_synthetic(SyntheticTask::triangle_detect, 80, 9);
  BackboneConfig bcfg{.L = 3, .d = 8, .d_in = ds.d_in, .d_e = ds.d_e, .T = ds.T,
                      .head_layers = 2};
  Backbone bb(bcfg, 51);
  bb.set_trainable(false);

  TuneConfig cfg;
  cfg.mode = TuneMode::gspf;
  cfg.k = 2;
  cfg.edge = EdgePlacement::deep;
  cfg.epochs = 5;
  cfg.seeds = {0, 1, 2};

  nlohmann::ordered_json manifest;
  manifest["tool_version"] = "acceptance";
  manifest["timestamp"] = "2000-01-01T00:00:00Z";  // pinned, as with SOURCE_DATE_EPOCH
  manifest["config"] = cfg.to_json();
  manifest["seeds"] = cfg.seeds;

  setenv("GRAFT_THREADS", "1", 1);
  std::string rep1 = tune(ds, bb, cfg).report.to_json(manifest).dump(2);
  setenv("GRAFT_THREADS", "4", 1);
  std::string rep2 = tune(ds, bb, cfg).report.to_json(manifest).dump(2);
  unsetenv("GRAFT_THREADS");

  bool ok = rep1 == rep2;
  report(9, ok,
         std::string("two tuning runs with an identical manifest (1 vs 4 worker threads): ") +
             (ok ? "byte-identical reports" : "REPORTS DIFFER"));
}

}  // namespace

int main() {
  std::cout.setf(std::ios::boolalpha);
  criterion_gradients();
  criterion_reductions();
  criterion_param_counts();
  criterion_frozen_backbone();
  criterion_normalization();

  bool c7_pass = false;
  std::string c7_detail = "transfer experiment did not run";
  try {
    criteria_transfer(c7_pass, c7_detail);
  } catch (const std::exception& e) {
    report(6, false, std::string("transfer experiment failed: ") + e.what());
  }
  report(7, c7_pass, c7_detail);

  criterion_auc_oracle();
  criterion_determinism();

  if (g_failures > 0) {
    std::cout << g_failures << " criterion(s) failed" << std::endl;
    return 1;
  }
  std::cout << "all acceptance criteria passed" << std::endl;
  return 0;
}
