#include "graft/eval.hpp"

#include <sstream>

namespace graft {

using ordered_json = nlohmann::ordered_json;

namespace {

long long backbone_param_count(const ParamCountConfig& c) {
  long long input = static_cast<long long>(c.d_in) * c.d + c.d;
  long long per_layer = static_cast<long long>(c.d_e) * c.d + c.d  // edge projection
                        + 2 * (static_cast<long long>(c.d) * c.d + c.d);  // two-layer MLP
  return input + c.L * per_layer;
}

long long head_param_count(const ParamCountConfig& c) {
  long long total = 0;
  for (int i = 0; i < c.head_layers; ++i) {
    long long out = (i == c.head_layers - 1) ? c.T : c.d;
    total += static_cast<long long>(c.d) * out + out;
  }
  return total;
}

long long edge_param_count(const ParamCountConfig& c) {
  if (c.edge == EdgePlacement::off) return 0;
  long long layer1 = 2LL * (2LL * c.d_in + c.d_e);
  if (c.edge == EdgePlacement::shallow) return layer1;
  return layer1 + (c.L - 1) * 2LL * (2LL * c.d + c.d_e);
}

}  // namespace

ParamBudget count_params(const ParamCountConfig& c) {
  ParamBudget b;
  std::ostringstream formula;
  switch (c.mode) {
    case TuneMode::gpf:
      b.prompt_basis = c.d_in;
      formula << "d_in = " << c.d_in;
      break;
    case TuneMode::gpf_plus:
      b.prompt_basis = static_cast<long long>(c.k) * c.d_in;
      b.attention = static_cast<long long>(c.k) * c.d_in;
      formula << "k*d_in (basis) + k*d_in (attention) = " << b.prompt_basis << " + " << b.attention;
      break;
    case TuneMode::gspf:
      if (c.node_prompt_on) {
        b.prompt_basis = static_cast<long long>(c.k) * c.d_in;
        b.gate = c.d_in + 1;
        if (c.learnable_attention) b.attention = static_cast<long long>(c.k) * c.d_in;
        formula << "k*d_in (basis) + (d_in+1) (gate)";
      }
      b.edge = edge_param_count(c);
      if (b.edge > 0) formula << (c.node_prompt_on ? " + " : "") << "sum_l 2*(2*d_x(l)+d_e) (edges)";
      formula << " = " << b.prompt_basis;
      if (b.gate > 0) formula << " + " << b.gate;
      if (b.edge > 0) formula << " + " << b.edge;
      break;
    case TuneMode::ft:
      b.backbone = backbone_param_count(c);
      formula << "all backbone weights + head = " << b.backbone;
      break;
    case TuneMode::linear_probe:
      formula << "head only";
      break;
  }
  b.head = head_param_count(c);
  if (c.mode == TuneMode::ft) {
    b.total = b.backbone + b.head;  // FT tunes the full model
  } else {
    b.total = b.prompt_basis + b.attention + b.gate + b.edge;
    if (c.include_head) b.total += b.head;
  }
  b.formula = formula.str();
  return b;
}

long long runtime_prompt_param_count(const TuneConfig& cfg, const BackboneConfig& bcfg) {
  PromptState st = make_prompt_state(cfg, bcfg, 0);
  long long total = 0;
  for (const auto& p : st.node_prompt.params())
    if (p->trainable) total += static_cast<long long>(p->size());
  for (const auto& p : st.edge_prompt.params())
    if (p->trainable) total += static_cast<long long>(p->size());
  return total;
}

ordered_json ParamBudget::to_json() const {
  ordered_json j;
  j["prompt_basis"] = prompt_basis;
  j["attention"] = attention;
  j["gate"] = gate;
  j["edge"] = edge;
  j["backbone"] = backbone;
  j["head"] = head;
  j["total"] = total;
  j["formula"] = formula;
  return j;
}

namespace {

AblationCell run_cell(const Dataset& ds, const Backbone& bb, const TuneConfig& cfg, bool np_on,
                      bool ep_on) {
  AblationCell cell;
  cell.np_on = np_on;
  cell.ep_on = ep_on;
  try {
    cell.report = tune(ds, bb, cfg).report;
    cell.ok = true;
  } catch (const std::exception& e) {
    cell.error = e.what();
  }
  return cell;
}

std::string fmt_cell(const AblationCell& c) {
  if (!c.ok) return "missing (" + c.error + ")";
  std::ostringstream os;
  os.precision(4);
  os << std::fixed << c.report.mean_test_auc << " +- " << c.report.std_test_auc;
  return os.str();
}

}  // namespace

AblationResult run_ablation(const Dataset& ds, const Backbone& bb, const TuneConfig& base) {
  EdgePlacement ep_place = base.edge == EdgePlacement::off ? EdgePlacement::deep : base.edge;

  TuneConfig ft_cfg = base;
  ft_cfg.mode = TuneMode::ft;
  ft_cfg.edge = EdgePlacement::off;
  ft_cfg.node_prompt_on = true;

  TuneConfig np_cfg = base;
  np_cfg.mode = TuneMode::gspf;
  np_cfg.edge = EdgePlacement::off;
  np_cfg.node_prompt_on = true;

  TuneConfig ep_cfg = base;
  ep_cfg.mode = TuneMode::gspf;
  ep_cfg.edge = ep_place;
  ep_cfg.node_prompt_on = false;

  TuneConfig both_cfg = base;
  both_cfg.mode = TuneMode::gspf;
  both_cfg.edge = ep_place;
  both_cfg.node_prompt_on = true;

  AblationResult out;
  out.cells[0] = run_cell(ds, bb, ft_cfg, false, false);
  out.cells[1] = run_cell(ds, bb, np_cfg, true, false);
  out.cells[2] = run_cell(ds, bb, ep_cfg, false, true);
  out.cells[3] = run_cell(ds, bb, both_cfg, true, true);

  TuneConfig shallow_cfg = both_cfg;
  shallow_cfg.edge = EdgePlacement::shallow;
  TuneConfig deep_cfg = both_cfg;
  deep_cfg.edge = EdgePlacement::deep;
  out.shallow = run_cell(ds, bb, shallow_cfg, true, true);
  out.deep = run_cell(ds, bb, deep_cfg, true, true);
  return out;
}

ordered_json AblationResult::to_json(const ordered_json& manifest) const {
  ordered_json j;
  j["version"] = 1;
  j["manifest"] = manifest;
  ordered_json grid = ordered_json::array();
  for (const auto& c : cells) {
    ordered_json cj;
    cj["np"] = c.np_on;
    cj["ep"] = c.ep_on;
    cj["ok"] = c.ok;
    if (c.ok) {
      cj["mean_test_auc"] = c.report.mean_test_auc;
      cj["std_test_auc"] = c.report.std_test_auc;
    } else {
      cj["error"] = c.error;
    }
    grid.push_back(std::move(cj));
  }
  j["grid"] = std::move(grid);
  auto place = [](const AblationCell& c) {
    ordered_json pj;
    pj["ok"] = c.ok;
    if (c.ok) {
      pj["mean_test_auc"] = c.report.mean_test_auc;
      pj["std_test_auc"] = c.report.std_test_auc;
    } else {
      pj["error"] = c.error;
    }
    return pj;
  };
  j["shallow"] = place(shallow);
  j["deep"] = place(deep);
  return j;
}

std::string AblationResult::table_text() const {
  std::ostringstream os;
  os << "NP   EP   test ROC-AUC (mean +- std)\n";
  const char* marks[4][2] = {{"-", "-"}, {"x", "-"}, {"-", "x"}, {"x", "x"}};
  for (int i = 0; i < 4; ++i)
    os << marks[i][0] << "    " << marks[i][1] << "    " << fmt_cell(cells[i]) << "\n";
  os << "\nedge prompt placement:\n";
  os << "shallow: " << fmt_cell(shallow) << "\n";
  os << "deep:    " << fmt_cell(deep) << "\n";
  return os.str();
}

std::string AblationResult::table_csv() const {
  std::ostringstream os;
  os << "np,ep,mean_test_auc,std_test_auc\n";
  for (const auto& c : cells) {
    os << (c.np_on ? 1 : 0) << "," << (c.ep_on ? 1 : 0) << ",";
    if (c.ok)
      os << c.report.mean_test_auc << "," << c.report.std_test_auc;
    os << "\n";
  }
  return os.str();
}

}  // namespace graft
