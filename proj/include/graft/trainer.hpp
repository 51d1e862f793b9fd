#pragma once

// Frozen-backbone prompt tuning, Adam optimizer, seed protocol and
// PromptState serialization, plus desk-scale supervised pre-training.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "graft/backbone.hpp"
#include "graft/graphdata.hpp"

namespace graft {

enum class TuneMode { gpf, gpf_plus, gspf, ft, linear_probe };

TuneMode tune_mode_from_name(const std::string& name);
std::string tune_mode_name(TuneMode m);

struct TuneConfig {
  TuneMode mode = TuneMode::gspf;
  int k = 5;
  EdgePlacement edge = EdgePlacement::off;
  double lr = 1e-3;
  double weight_decay = 1e-5;
  int epochs = 50;
  int head_layers = 2;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  int batch_size = 32;
  bool node_prompt_on = true;  // gspf ablation knob (edge-prompt-only runs)
  bool learnable_attention = false;
  bool edge_degree_compensation = false;  // tau scaled by |N(i)| at init parity
  std::optional<double> fixed_gate;

  void validate() const;  // throws on contradictions (e.g. gpf with k > 1)
  std::vector<std::string> grid_warnings() const;
  nlohmann::ordered_json to_json() const;
};

class Adam {
 public:
  Adam(std::vector<ad::ParamPtr> params, double lr, double weight_decay);

  void zero_grad();
  void scale_grad(double factor);
  void step();  // beta1=0.9, beta2=0.999, eps=1e-8; L2 decay added to the gradient

  int steps() const { return t_; }
  const std::vector<ad::ParamPtr>& params() const { return params_; }
  const std::vector<double>& moment1(std::size_t i) const { return m_[i]; }
  const std::vector<double>& moment2(std::size_t i) const { return v_[i]; }
  void set_state(int t, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v);

 private:
  std::vector<ad::ParamPtr> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, wd_;
  int t_ = 0;
};

struct PromptState {
  TuneMode mode = TuneMode::linear_probe;
  NodePrompt node_prompt;
  EdgePrompt edge_prompt;
  Head head;
  // Optimizer moments, aligned with trainable_params() order.
  int opt_step = 0;
  std::vector<std::vector<double>> opt_m, opt_v;

  // Never contains backbone entries.
  std::vector<ad::ParamPtr> trainable_params() const;
};

// Fresh prompt/head parameters for a config (used by tuning, gradient
// checking and runtime parameter accounting).
PromptState make_prompt_state(const TuneConfig& cfg, const BackboneConfig& bcfg,
                              std::uint64_t seed);

void save_prompt_state(const std::string& path, const PromptState& st, const TuneConfig& cfg);
PromptState load_prompt_state(const std::string& path, const BackboneConfig& bb_cfg,
                              TuneConfig* cfg_out = nullptr);

struct SeedResult {
  std::uint64_t seed = 0;
  bool ok = true;
  std::string error;
  double test_auc = 0.0;
  double best_valid_auc = 0.0;
  int best_epoch = -1;
  double first_epoch_loss = 0.0;
  double last_epoch_loss = 0.0;
  int skipped_graphs = 0;
};

struct RunReport {
  std::vector<SeedResult> seeds;
  double mean_test_auc = 0.0;
  double std_test_auc = 0.0;
  int skipped_graphs = 0;
  std::vector<std::string> warnings;
  std::string backbone_hash_before, backbone_hash_after;

  nlohmann::ordered_json to_json(const nlohmann::ordered_json& manifest) const;
};

struct TuneResult {
  RunReport report;
  PromptState state;  // tuned state of the first successful seed
};

// Runs `cfg.epochs` of minibatch Adam per seed over the train split,
// selects the best epoch by validation ROC-AUC and reports test ROC-AUC.
// The backbone stays frozen (mode != ft); seeds may run in parallel
// (capped by GRAFT_THREADS) without affecting results.
TuneResult tune(const Dataset& ds, const Backbone& backbone, const TuneConfig& cfg);

struct PretrainConfig {
  BackboneConfig backbone;
  double lr = 1e-3;
  double weight_decay = 0.0;
  int epochs = 30;
  int batch_size = 32;
  std::uint64_t seed = 0;
};

struct PretrainResult {
  Backbone backbone;
  Head head;
  double best_valid_auc = 0.0;
  int best_epoch = -1;
};

PretrainResult pretrain(const Dataset& source, const PretrainConfig& cfg);

// Mean multi-task ROC-AUC of a model over one split.
double evaluate_auc(const Dataset& ds, Split split, const Backbone& bb, const Head& head,
                    const NodePrompt* np = nullptr, const EdgePrompt* ep = nullptr);

// FNV-1a hash over the backbone's weight bytes; used for freezing checks.
std::string backbone_hash(const Backbone& bb);

}  // namespace graft
