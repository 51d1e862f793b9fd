#pragma once

// Tunable-parameter accounting and the NP/EP ablation grid with the
// shallow vs deep edge-prompt comparison.

#include <array>
#include <string>

#include <json.hpp>

#include "graft/trainer.hpp"

namespace graft {

struct ParamCountConfig {
  TuneMode mode = TuneMode::gspf;
  int k = 1;
  EdgePlacement edge = EdgePlacement::off;
  int d_in = 0, d = 0, d_e = 0, L = 5;
  int head_layers = 2;
  int T = 1;
  bool node_prompt_on = true;
  bool learnable_attention = false;
  bool include_head = false;  // Table II convention: head excluded
};

struct ParamBudget {
  long long prompt_basis = 0;
  long long attention = 0;  // gpf_plus a_j vectors (reported separately)
  long long gate = 0;
  long long edge = 0;
  long long backbone = 0;  // ft only
  long long head = 0;
  long long total = 0;  // headline count per the include_head convention
  std::string formula;  // symbolic derivation

  nlohmann::ordered_json to_json() const;
};

ParamBudget count_params(const ParamCountConfig& cfg);

// Number of scalars the optimizer actually updates for this config,
// excluding the head (and the backbone in ft mode) so it is directly
// comparable with the symbolic prompt-parameter count.
long long runtime_prompt_param_count(const TuneConfig& cfg, const BackboneConfig& bcfg);

struct AblationCell {
  bool np_on = false;
  bool ep_on = false;
  bool ok = false;
  std::string error;
  RunReport report;
};

struct AblationResult {
  // Table III row order: (-,-), (NP,-), (-,EP), (NP,EP)
  std::array<AblationCell, 4> cells;
  AblationCell shallow, deep;

  nlohmann::ordered_json to_json(const nlohmann::ordered_json& manifest) const;
  std::string table_text() const;
  std::string table_csv() const;
};

// Runs the 4-cell grid plus the shallow/deep comparison. All cells share
// the base config's seed list; EP cells use the base edge placement
// (deep when the base has it off).
AblationResult run_ablation(const Dataset& ds, const Backbone& bb, const TuneConfig& base);

}  // namespace graft
