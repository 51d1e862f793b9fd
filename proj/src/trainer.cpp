#include "graft/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "graft/metrics.hpp"

namespace graft {

using ordered_json = nlohmann::ordered_json;

TuneMode tune_mode_from_name(const std::string& name) {
  if (name == "gpf") return TuneMode::gpf;
  if (name == "gpf_plus") return TuneMode::gpf_plus;
  if (name == "gspf") return TuneMode::gspf;
  if (name == "ft") return TuneMode::ft;
  if (name == "linear_probe") return TuneMode::linear_probe;
  throw std::runtime_error("unknown tuning mode '" + name + "'");
}

std::string tune_mode_name(TuneMode m) {
  switch (m) {
    case TuneMode::gpf: return "gpf";
    case TuneMode::gpf_plus: return "gpf_plus";
    case TuneMode::gspf: return "gspf";
    case TuneMode::ft: return "ft";
    case TuneMode::linear_probe: return "linear_probe";
  }
  throw std::logic_error("bad mode");
}

void TuneConfig::validate() const {
  if (mode == TuneMode::gpf && k != 1)
    throw std::runtime_error("config contradiction: gpf uses a single shared prompt (k must be 1)");
  if ((mode == TuneMode::ft || mode == TuneMode::linear_probe) && edge != EdgePlacement::off)
    throw std::runtime_error("config contradiction: edge prompts require a prompt mode");
  if (mode != TuneMode::gspf && !node_prompt_on)
    throw std::runtime_error("config contradiction: --no-node-prompt only applies to gspf");
  if (k < 1) throw std::runtime_error("k must be >= 1");
  if (epochs < 0) throw std::runtime_error("epochs must be >= 0");
  if (batch_size < 1) throw std::runtime_error("batch size must be >= 1");
  if (head_layers < 1 || head_layers > 4) throw std::runtime_error("head layers must be in [1, 4]");
  if (lr <= 0.0) throw std::runtime_error("learning rate must be positive");
  if (weight_decay < 0.0) throw std::runtime_error("weight decay must be non-negative");
  if (seeds.empty()) throw std::runtime_error("at least one seed required");
}

std::vector<std::string> TuneConfig::grid_warnings() const {
  std::vector<std::string> out;
  auto in = [](double x, std::initializer_list<double> set) {
    for (double s : set)
      if (x == s) return true;
    return false;
  };
  if (!in(lr, {1e-3, 5e-4, 1e-4})) out.push_back("non-paper grid: lr not in {1e-3, 5e-4, 1e-4}");
  if (!in(weight_decay, {1e-5, 1e-4, 1e-3}))
    out.push_back("non-paper grid: weight decay not in {1e-5, 1e-4, 1e-3}");
  if (epochs != 50 && epochs != 100 && epochs != 150 && epochs != 200)
    out.push_back("non-paper grid: epochs not in {50, 100, 150, 200}");
  if (k != 1 && k != 5 && k != 10 && k != 20)
    out.push_back("non-paper grid: k not in {1, 5, 10, 20}");
  return out;
}

ordered_json TuneConfig::to_json() const {
  ordered_json j;
  j["mode"] = tune_mode_name(mode);
  j["k"] = k;
  j["edge"] = edge_placement_name(edge);
  j["lr"] = lr;
  j["weight_decay"] = weight_decay;
  j["epochs"] = epochs;
  j["head_layers"] = head_layers;
  j["seeds"] = seeds;
  j["batch_size"] = batch_size;
  j["node_prompt_on"] = node_prompt_on;
  j["learnable_attention"] = learnable_attention;
  j["edge_degree_compensation"] = edge_degree_compensation;
  if (fixed_gate)
    j["fixed_gate"] = *fixed_gate;
  else
    j["fixed_gate"] = nullptr;
  return j;
}

Adam::Adam(std::vector<ad::ParamPtr> params, double lr, double weight_decay)
    : params_(std::move(params)), lr_(lr), wd_(weight_decay) {
  for (const auto& p : params_) {
    m_.emplace_back(p->size(), 0.0);
    v_.emplace_back(p->size(), 0.0);
  }
}

void Adam::zero_grad() {
  for (const auto& p : params_) p->zero_grad();
}

void Adam::scale_grad(double factor) {
  for (const auto& p : params_)
    for (double& g : p->grad) g *= factor;
}

void Adam::step() {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++t_;
  const double c1 = 1.0 - std::pow(b1, t_);
  const double c2 = 1.0 - std::pow(b2, t_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = *params_[i];
    if (!p.trainable) continue;
    for (std::size_t k = 0; k < p.size(); ++k) {
      double g = p.grad[k] + wd_ * p.values[k];
      m_[i][k] = b1 * m_[i][k] + (1.0 - b1) * g;
      v_[i][k] = b2 * v_[i][k] + (1.0 - b2) * g * g;
      double mhat = m_[i][k] / c1;
      double vhat = v_[i][k] / c2;
      p.values[k] -= lr_ * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

void Adam::set_state(int t, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v) {
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

std::vector<ad::ParamPtr> PromptState::trainable_params() const {
  std::vector<ad::ParamPtr> out;
  for (const auto& p : node_prompt.params()) out.push_back(p);
  for (const auto& p : edge_prompt.params()) out.push_back(p);
  for (const auto& p : head.params()) out.push_back(p);
  return out;
}

namespace {

constexpr int kPromptStateVersion = 1;

std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<std::vector<double>> snapshot(const std::vector<ad::ParamPtr>& params) {
  std::vector<std::vector<double>> out;
  for (const auto& p : params) out.push_back(p->values);
  return out;
}

void restore(const std::vector<ad::ParamPtr>& params, const std::vector<std::vector<double>>& snap) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->values = snap[i];
}

int num_threads(std::size_t jobs) {
  unsigned hw = std::thread::hardware_concurrency();
  int t = hw == 0 ? 1 : static_cast<int>(hw);
  if (const char* env = std::getenv("GRAFT_THREADS")) {
    int v = std::atoi(env);
    if (v >= 1) t = v;
  }
  return std::max(1, std::min<int>(t, static_cast<int>(jobs)));
}

}  // namespace

PromptState make_prompt_state(const TuneConfig& cfg, const BackboneConfig& bcfg,
                              std::uint64_t seed) {
  PromptState st;
  st.mode = cfg.mode;
  NodePromptConfig np;
  np.d_in = bcfg.d_in;
  switch (cfg.mode) {
    case TuneMode::gpf:
      np.mode = PromptMode::gpf;
      np.k = 1;
      break;
    case TuneMode::gpf_plus:
      np.mode = PromptMode::gpf_plus;
      np.k = cfg.k;
      break;
    case TuneMode::gspf:
      np.mode = cfg.node_prompt_on ? PromptMode::gspf : PromptMode::none;
      np.k = cfg.k;
      np.learnable_attention = cfg.learnable_attention;
      np.fixed_gate = cfg.fixed_gate;
      break;
    case TuneMode::ft:
    case TuneMode::linear_probe:
      np.mode = PromptMode::none;
      break;
  }
  st.node_prompt = NodePrompt(np, seed * 2654435761ULL + 1);
  if (cfg.edge != EdgePlacement::off) {
    EdgePromptConfig ec;
    ec.placement = cfg.edge;
    ec.layers = bcfg.L;
    ec.d_in = bcfg.d_in;
    ec.d = bcfg.d;
    ec.d_e = bcfg.d_e;
    ec.degree_compensation = cfg.edge_degree_compensation;
    st.edge_prompt = EdgePrompt(ec, seed);
  }
  BackboneConfig hcfg = bcfg;
  hcfg.head_layers = cfg.head_layers;
  st.head = Head(hcfg, seed * 6364136223846793005ULL + 1442695040888963407ULL);
  return st;
}

namespace {

double evaluate_state(const Dataset& ds, Split split, const Backbone& bb, const PromptState& st) {
  return evaluate_auc(ds, split, bb, st.head,
                      st.node_prompt.config().mode != PromptMode::none ? &st.node_prompt : nullptr,
                      st.edge_prompt.config().placement != EdgePlacement::off ? &st.edge_prompt
                                                                              : nullptr);
}

SeedResult run_seed(const Dataset& ds, const Backbone& frozen, const TuneConfig& cfg,
                    std::uint64_t seed, PromptState* out_state) {
  SeedResult res;
  res.seed = seed;
  try {
    const Backbone* bb = &frozen;
    Backbone local;
    if (cfg.mode == TuneMode::ft) {
      local = frozen.clone();
      local.set_trainable(true);
      bb = &local;
    }
    PromptState st = make_prompt_state(cfg, frozen.config(), seed);
    std::vector<ad::ParamPtr> trainables = st.trainable_params();
    if (cfg.mode == TuneMode::ft)
      for (const auto& p : local.params()) trainables.push_back(p);

    Adam opt(trainables, cfg.lr, cfg.weight_decay);
    std::mt19937_64 rng(seed);
    std::vector<int> train_idx = ds.split_indices(Split::train);

    const NodePrompt* np =
        st.node_prompt.config().mode != PromptMode::none ? &st.node_prompt : nullptr;
    const EdgePrompt* ep =
        st.edge_prompt.config().placement != EdgePlacement::off ? &st.edge_prompt : nullptr;

    res.best_valid_auc = evaluate_state(ds, Split::valid, *bb, st);
    res.best_epoch = 0;
    auto best = snapshot(trainables);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
      std::shuffle(train_idx.begin(), train_idx.end(), rng);
      double epoch_loss = 0.0;
      int epoch_graphs = 0;
      for (std::size_t start = 0; start < train_idx.size();
           start += static_cast<std::size_t>(cfg.batch_size)) {
        opt.zero_grad();
        int in_batch = 0;
        for (std::size_t i = start;
             i < std::min(train_idx.size(), start + static_cast<std::size_t>(cfg.batch_size));
             ++i) {
          const LabeledGraph& g = ds.graphs[train_idx[i]];
          bool any_label = false;
          for (int l : g.labels) any_label = any_label || l >= 0;
          if (!any_label) {
            if (epoch == 1) ++res.skipped_graphs;
            continue;
          }
          ad::Tape t;
          ad::Value loss = masked_bce(forward_logits(t, g, *bb, st.head, np, ep), g.labels);
          t.backward(loss);
          epoch_loss += loss.scalar();
          ++epoch_graphs;
          ++in_batch;
        }
        if (in_batch > 0) {
          opt.scale_grad(1.0 / in_batch);  // batch gradient is the mean over graphs
          opt.step();
        }
      }
      if (epoch_graphs > 0) epoch_loss /= epoch_graphs;
      if (epoch == 1) res.first_epoch_loss = epoch_loss;
      res.last_epoch_loss = epoch_loss;

      double valid_auc = evaluate_state(ds, Split::valid, *bb, st);
      if (valid_auc > res.best_valid_auc) {
        res.best_valid_auc = valid_auc;
        res.best_epoch = epoch;
        best = snapshot(trainables);
      }
    }

    restore(trainables, best);
    res.test_auc = evaluate_state(ds, Split::test, *bb, st);
    if (out_state) {
      st.opt_step = opt.steps();
      for (std::size_t i = 0; i < st.trainable_params().size(); ++i) {
        st.opt_m.push_back(opt.moment1(i));
        st.opt_v.push_back(opt.moment2(i));
      }
      *out_state = std::move(st);
    }
  } catch (const std::exception& e) {
    res.ok = false;
    res.error = e.what();
  }
  return res;
}

}  // namespace

std::string backbone_hash(const Backbone& bb) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : bb.params())
    h = fnv1a(p->values.data(), p->values.size() * sizeof(double), h);
  return hex64(h);
}

double evaluate_auc(const Dataset& ds, Split split, const Backbone& bb, const Head& head,
                    const NodePrompt* np, const EdgePrompt* ep) {
  std::vector<std::vector<double>> scores;
  std::vector<std::vector<int>> labels;
  for (int idx : ds.split_indices(split)) {
    const LabeledGraph& g = ds.graphs[idx];
    std::vector<double> logits = eval_logits(g, bb, head, np, ep);
    for (double& z : logits) z = 1.0 / (1.0 + std::exp(-z));
    scores.push_back(std::move(logits));
    labels.push_back(g.labels);
  }
  return multi_task_auc(scores, labels, ds.T).mean;
}

TuneResult tune(const Dataset& ds, const Backbone& backbone, const TuneConfig& cfg) {
  cfg.validate();
  if (ds.d_in != backbone.config().d_in || ds.d_e != backbone.config().d_e)
    throw std::runtime_error("dataset dimensions do not match backbone config");

  TuneResult result;
  result.report.warnings = cfg.grid_warnings();
  result.report.backbone_hash_before = backbone_hash(backbone);

  const std::size_t n_seeds = cfg.seeds.size();
  std::vector<SeedResult> seed_results(n_seeds);
  std::vector<PromptState> states(n_seeds);

  int threads = num_threads(n_seeds);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n_seeds; ++i)
      seed_results[i] = run_seed(ds, backbone, cfg, cfg.seeds[i], &states[i]);
  } else {
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    for (int w = 0; w < threads; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < n_seeds; i = next.fetch_add(1))
          seed_results[i] = run_seed(ds, backbone, cfg, cfg.seeds[i], &states[i]);
      });
    for (auto& t : pool) t.join();
  }

  result.report.seeds = seed_results;
  double sum = 0.0;
  int ok = 0;
  for (const auto& r : seed_results) {
    result.report.skipped_graphs += r.skipped_graphs;
    if (r.ok) {
      sum += r.test_auc;
      ++ok;
    }
  }
  if (ok > 0) result.report.mean_test_auc = sum / ok;
  if (ok > 1) {
    double sq = 0.0;
    for (const auto& r : seed_results)
      if (r.ok) sq += (r.test_auc - result.report.mean_test_auc) *
                      (r.test_auc - result.report.mean_test_auc);
    result.report.std_test_auc = std::sqrt(sq / (ok - 1));
  }
  for (std::size_t i = 0; i < n_seeds; ++i)
    if (seed_results[i].ok) {
      result.state = std::move(states[i]);
      break;
    }
  result.report.backbone_hash_after = backbone_hash(backbone);
  return result;
}

PretrainResult pretrain(const Dataset& source, const PretrainConfig& cfg) {
  BackboneConfig bcfg = cfg.backbone;
  bcfg.d_in = source.d_in;
  bcfg.d_e = source.d_e;
  bcfg.T = source.T;
  PretrainResult out;
  out.backbone = Backbone(bcfg, cfg.seed);
  out.backbone.set_trainable(true);
  out.head = Head(bcfg, cfg.seed * 2862933555777941757ULL + 3037000493ULL);

  std::vector<ad::ParamPtr> trainables = out.backbone.params();
  for (const auto& p : out.head.params()) trainables.push_back(p);
  Adam opt(trainables, cfg.lr, cfg.weight_decay);
  std::mt19937_64 rng(cfg.seed);
  std::vector<int> train_idx = source.split_indices(Split::train);

  out.best_valid_auc = evaluate_auc(source, Split::valid, out.backbone, out.head);
  out.best_epoch = 0;
  auto best = snapshot(trainables);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(train_idx.begin(), train_idx.end(), rng);
    for (std::size_t start = 0; start < train_idx.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      opt.zero_grad();
      int in_batch = 0;
      for (std::size_t i = start;
           i < std::min(train_idx.size(), start + static_cast<std::size_t>(cfg.batch_size)); ++i) {
        const LabeledGraph& g = source.graphs[train_idx[i]];
        bool any_label = false;
        for (int l : g.labels) any_label = any_label || l >= 0;
        if (!any_label) continue;
        ad::Tape t;
        ad::Value loss = masked_bce(forward_logits(t, g, out.backbone, out.head), g.labels);
        t.backward(loss);
        ++in_batch;
      }
      if (in_batch > 0) {
        opt.scale_grad(1.0 / in_batch);
        opt.step();
      }
    }
    double valid_auc = evaluate_auc(source, Split::valid, out.backbone, out.head);
    if (valid_auc > out.best_valid_auc) {
      out.best_valid_auc = valid_auc;
      out.best_epoch = epoch;
      best = snapshot(trainables);
    }
  }
  restore(trainables, best);
  out.backbone.set_trainable(false);
  return out;
}

ordered_json RunReport::to_json(const ordered_json& manifest) const {
  ordered_json j;
  j["version"] = 1;
  j["manifest"] = manifest;
  ordered_json seeds_json = ordered_json::array();
  for (const auto& r : seeds) {
    ordered_json s;
    s["seed"] = r.seed;
    s["ok"] = r.ok;
    if (!r.ok) s["error"] = r.error;
    s["test_auc"] = r.test_auc;
    s["best_valid_auc"] = r.best_valid_auc;
    s["best_epoch"] = r.best_epoch;
    s["first_epoch_loss"] = r.first_epoch_loss;
    s["last_epoch_loss"] = r.last_epoch_loss;
    seeds_json.push_back(std::move(s));
  }
  j["seeds"] = std::move(seeds_json);
  j["aggregate"] = {{"mean_test_auc", mean_test_auc}, {"std_test_auc", std_test_auc}};
  j["skipped_graphs"] = skipped_graphs;
  j["warnings"] = warnings;
  j["backbone_hash_before"] = backbone_hash_before;
  j["backbone_hash_after"] = backbone_hash_after;
  return j;
}

void save_prompt_state(const std::string& path, const PromptState& st, const TuneConfig& cfg) {
  ordered_json j;
  j["version"] = kPromptStateVersion;
  j["mode"] = tune_mode_name(st.mode);
  j["config"] = cfg.to_json();
  ordered_json tensors;
  for (const auto& p : st.trainable_params()) {
    ordered_json rows = ordered_json::array();
    for (std::size_t r = 0; r < p->rows; ++r) {
      ordered_json row = ordered_json::array();
      for (std::size_t c = 0; c < p->cols; ++c) row.push_back(p->values[r * p->cols + c]);
      rows.push_back(std::move(row));
    }
    tensors[p->id] = std::move(rows);
  }
  j["tensors"] = std::move(tensors);
  ordered_json opt;
  opt["step"] = st.opt_step;
  opt["m"] = st.opt_m;
  opt["v"] = st.opt_v;
  j["optimizer"] = std::move(opt);

  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write '" + tmp + "'");
    f << j.dump() << "\n";
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("cannot rename '" + tmp + "' to '" + path + "'");
}

PromptState load_prompt_state(const std::string& path, const BackboneConfig& bb_cfg,
                              TuneConfig* cfg_out) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open prompt state '" + path + "'");
  ordered_json j = ordered_json::parse(f);
  int version = j.value("version", -1);
  if (version != kPromptStateVersion)
    throw std::runtime_error("prompt state version mismatch: file has version " +
                             std::to_string(version));
  TuneConfig cfg;
  const auto& c = j.at("config");
  cfg.mode = tune_mode_from_name(c.at("mode").get<std::string>());
  cfg.k = c.at("k").get<int>();
  cfg.edge = edge_placement_from_name(c.at("edge").get<std::string>());
  cfg.lr = c.at("lr").get<double>();
  cfg.weight_decay = c.at("weight_decay").get<double>();
  cfg.epochs = c.at("epochs").get<int>();
  cfg.head_layers = c.at("head_layers").get<int>();
  cfg.seeds = c.at("seeds").get<std::vector<std::uint64_t>>();
  cfg.batch_size = c.at("batch_size").get<int>();
  cfg.node_prompt_on = c.at("node_prompt_on").get<bool>();
  cfg.learnable_attention = c.at("learnable_attention").get<bool>();
  cfg.edge_degree_compensation = c.value("edge_degree_compensation", false);
  if (!c.at("fixed_gate").is_null()) cfg.fixed_gate = c.at("fixed_gate").get<double>();
  if (cfg_out) *cfg_out = cfg;

  PromptState st = make_prompt_state(cfg, bb_cfg, 0);
  const auto& tensors = j.at("tensors");
  for (const auto& p : st.trainable_params()) {
    if (!tensors.contains(p->id))
      throw std::runtime_error("prompt state: missing tensor '" + p->id + "'");
    const auto& rows = tensors.at(p->id);
    if (rows.size() != p->rows)
      throw std::runtime_error("prompt state: shape mismatch for '" + p->id + "'");
    for (std::size_t r = 0; r < p->rows; ++r)
      for (std::size_t col = 0; col < p->cols; ++col)
        p->values[r * p->cols + col] = rows[r][col].get<double>();
  }
  const auto& opt = j.at("optimizer");
  st.opt_step = opt.at("step").get<int>();
  st.opt_m = opt.at("m").get<std::vector<std::vector<double>>>();
  st.opt_v = opt.at("v").get<std::vector<std::vector<double>>>();
  return st;
}

}  // namespace graft
