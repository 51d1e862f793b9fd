#include "graft/ad.hpp"

#include <algorithm>
#include <cmath>

namespace graft::ad {

namespace {

void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

double sorted_sum(std::vector<double>& scratch) {
  std::sort(scratch.begin(), scratch.end());
  double s = 0.0;
  for (double x : scratch) s += x;
  return s;
}

std::size_t Value::rows() const { return tape->node(idx).rows; }
std::size_t Value::cols() const { return tape->node(idx).cols; }
const std::vector<double>& Value::data() const { return tape->node(idx).val; }

double Value::scalar() const {
  check(rows() == 1 && cols() == 1, "scalar() on non 1x1 value");
  return data()[0];
}

int Tape::push(std::size_t rows, std::size_t cols, std::vector<double> vals,
               std::function<void(Tape&)> back) {
  Node n;
  n.rows = rows;
  n.cols = cols;
  n.val = std::move(vals);
  n.grad.assign(n.val.size(), 0.0);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  backward_done_ = false;
  return static_cast<int>(nodes_.size()) - 1;
}

Value Tape::constant(std::size_t rows, std::size_t cols, std::vector<double> vals) {
  check(vals.size() == rows * cols, "constant: size mismatch");
  int i = push(rows, cols, std::move(vals), nullptr);
  return Value{this, i};
}

Value Tape::param(const ParamPtr& p) {
  check(p != nullptr, "param: null parameter");
  ParamTensor* raw = p.get();
  int i = push(p->rows, p->cols, p->values, nullptr);
  nodes_[i].back = [i, raw](Tape& t) {
    if (!raw->trainable) return;
    const auto& g = t.node(i).grad;
    for (std::size_t k = 0; k < g.size(); ++k) raw->grad[k] += g[k];
  };
  return Value{this, i};
}

void Tape::backward(Value loss) {
  check(loss.tape == this, "backward: value from another tape");
  check(loss.rows() == 1 && loss.cols() == 1, "backward: loss must be scalar");
  if (backward_done_) throw std::runtime_error("backward called twice without a new forward");
  if (!std::isfinite(loss.scalar())) throw numeric_error("backward: loss is non-finite");
  backward_done_ = true;
  nodes_[loss.idx].grad[0] = 1.0;
  for (int i = loss.idx; i >= 0; --i) {
    if (nodes_[i].back) nodes_[i].back(*this);
  }
}

Value add(Value a, Value b) {
  check(a.tape == b.tape, "add: mixed tapes");
  check(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  Tape& t = *a.tape;
  std::vector<double> out = a.data();
  const auto& bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  int ai = a.idx, bi = b.idx;
  int i = t.push(a.rows(), a.cols(), std::move(out), [](Tape&) {});
  t.node(i).back = [i, ai, bi](Tape& tp) {
    const auto& g = tp.node(i).grad;
    for (std::size_t k = 0; k < g.size(); ++k) {
      tp.node(ai).grad[k] += g[k];
      tp.node(bi).grad[k] += g[k];
    }
  };
  return Value{&t, i};
}

Value sub(Value a, Value b) {
  check(a.tape == b.tape, "sub: mixed tapes");
  check(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  Tape& t = *a.tape;
  std::vector<double> out = a.data();
  const auto& bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  int ai = a.idx, bi = b.idx;
  int i = t.push(a.rows(), a.cols(), std::move(out), nullptr);
  t.node(i).back = [i, ai, bi](Tape& tp) {
    const auto& g = tp.node(i).grad;
    for (std::size_t k = 0; k < g.size(); ++k) {
      tp.node(ai).grad[k] += g[k];
      tp.node(bi).grad[k] -= g[k];
    }
  };
  return Value{&t, i};
}

Value scale(Value a, double c) {
  Tape& t = *a.tape;
  std::vector<double> out = a.data();
  for (double& x : out) x *= c;
  int ai = a.idx;
  int i = t.push(a.rows(), a.cols(), std::move(out), nullptr);
  t.node(i).back = [i, ai, c](Tape& tp) {
    const auto& g = tp.node(i).grad;
    for (std::size_t k = 0; k < g.size(); ++k) tp.node(ai).grad[k] += c * g[k];
  };
  return Value{&t, i};
}

Value matmul(Value a, Value b) {
  check(a.tape == b.tape, "matmul: mixed tapes");
  check(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  Tape& t = *a.tape;
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  std::vector<double> out(n * m, 0.0);
  {
    const auto& av = a.data();
    const auto& bv = b.data();
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t q = 0; q < k; ++q) {
        double aq = av[r * k + q];
        if (aq == 0.0) continue;
        for (std::size_t c = 0; c < m; ++c) out[r * m + c] += aq * bv[q * m + c];
      }
  }
  int ai = a.idx, bi = b.idx;
  int i = t.push(n, m, std::move(out), nullptr);
  t.node(i).back = [i, ai, bi, n, k, m](Tape& tp) {
    const auto& g = tp.node(i).grad;
    const auto& av = tp.node(ai).val;
    const auto& bv = tp.node(bi).val;
    auto& ga = tp.node(ai).grad;
    auto& gb = tp.node(bi).grad;
    // dA = G·B^T, dB = A^T·G
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t q = 0; q < k; ++q) {
        double s = 0.0;
        for (std::size_t c = 0; c < m; ++c) s += g[r * m + c] * bv[q * m + c];
        ga[r * k + q] += s;
      }
    for (std::size_t q = 0; q < k; ++q)
      for (std::size_t c = 0; c < m; ++c) {
        double s = 0.0;
        for (std::size_t r = 0; r < n; ++r) s += av[r * k + q] * g[r * m + c];
        gb[q * m + c] += s;
      }
  };
  return Value{&t, i};
}

Value matmul_nt(Value a, Value b) {
  check(a.tape == b.tape, "matmul_nt: mixed tapes");
  check(a.cols() == b.cols(), "matmul_nt: inner dimension mismatch");
  Tape& t = *a.tape;
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  std::vector<double> out(n * m, 0.0);
  {
    const auto& av = a.data();
    const auto& bv = b.data();
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < m; ++c) {
        double s = 0.0;
        for (std::size_t q = 0; q < k; ++q) s += av[r * k + q] * bv[c * k + q];
        out[r * m + c] = s;
      }
  }
  int ai = a.idx, bi = b.idx;
  int i = t.push(n, m, std::move(out), nullptr);
  t.node(i).back = [i, ai, bi, n, k, m](Tape& tp) {
    const auto& g = tp.node(i).grad;
    const auto& av = tp.node(ai).val;
    const auto& bv = tp.node(bi).val;
    auto& ga = tp.node(ai).grad;
    auto& gb = tp.node(bi).grad;
    // out = A·B^T: dA = G·B, dB = G^T·A
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t q = 0; q < k; ++q) {
        double s = 0.0;
        for (std::size_t c = 0; c < m; ++c) s += g[r * m + c] * bv[c * k + q];
        ga[r * k + q] += s;
      }
    for (std::size_t c = 0; c < m; ++c)
      for (std::size_t q = 0; q < k; ++q) {
        double s = 0.0;
        for (std::size_t r = 0; r < n; ++r) s += g[r * m + c] * av[r * k + q];
        gb[c * k + q] += s;
      }
  };
  return Value{&t, i};
}

Value add_row_broadcast(Value x, Value row) {
  check(x.tape == row.tape, "add_row_broadcast: mixed tapes");
  check(row.rows() == 1 && row.cols() == x.cols(), "add_row_broadcast: shape mismatch");
  Tape& t = *x.tape;
  const std::size_t n = x.rows(), c = x.cols();
  std::vector<double> out = x.data();
  const auto& rv = row.data();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] += rv[j];
  int xi = x.idx, ri = row.idx;
  int i = t.push(n, c, std::move(out), nullptr);
  t.node(i).back = [i, xi, ri, n, c](Tape& tp) {
    const auto& g = tp.node(i).grad;
    auto& gx = tp.node(xi).grad;
    auto& gr = tp.node(ri).grad;
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < c; ++j) {
        gx[r * c + j] += g[r * c + j];
        gr[j] += g[r * c + j];
      }
  };
  return Value{&t, i};
}

Value relu(Value x) {
  Tape& t = *x.tape;
  std::vector<double> out = x.data();
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  int xi = x.idx;
  int i = t.push(x.rows(), x.cols(), std::move(out), nullptr);
  t.node(i).back = [i, xi](Tape& tp) {
    const auto& g = tp.node(i).grad;
    const auto& xv = tp.node(xi).val;
    auto& gx = tp.node(xi).grad;
    for (std::size_t k = 0; k < g.size(); ++k)
      if (xv[k] > 0.0) gx[k] += g[k];
  };
  return Value{&t, i};
}

Value sigmoid(Value x) {
  Tape& t = *x.tape;
  std::vector<double> out = x.data();
  for (double& v : out) {
    if (v >= 0.0) {
      v = 1.0 / (1.0 + std::exp(-v));
    } else {
      double e = std::exp(v);
      v = e / (1.0 + e);
    }
  }
  int xi = x.idx;
  int i = t.push(x.rows(), x.cols(), std::move(out), nullptr);
  t.node(i).back = [i, xi](Tape& tp) {
    const auto& g = tp.node(i).grad;
    const auto& s = tp.node(i).val;
    auto& gx = tp.node(xi).grad;
    for (std::size_t k = 0; k < g.size(); ++k) gx[k] += g[k] * s[k] * (1.0 - s[k]);
  };
  return Value{&t, i};
}

Value row_softmax(Value x) {
  Tape& t = *x.tape;
  const std::size_t n = x.rows(), c = x.cols();
  check(c >= 1, "row_softmax: empty rows");
  std::vector<double> out = x.data();
  std::vector<double> scratch;
  for (std::size_t r = 0; r < n; ++r) {
    double mx = out[r * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, out[r * c + j]);
    scratch.clear();
    for (std::size_t j = 0; j < c; ++j) {
      out[r * c + j] = std::exp(out[r * c + j] - mx);
      scratch.push_back(out[r * c + j]);
    }
    double denom = sorted_sum(scratch);
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] /= denom;
  }
  int xi = x.idx;
  int i = t.push(n, c, std::move(out), nullptr);
  t.node(i).back = [i, xi, n, c](Tape& tp) {
    const auto& g = tp.node(i).grad;
    const auto& s = tp.node(i).val;
    auto& gx = tp.node(xi).grad;
    for (std::size_t r = 0; r < n; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[r * c + j] * s[r * c + j];
      for (std::size_t j = 0; j < c; ++j)
        gx[r * c + j] += s[r * c + j] * (g[r * c + j] - dot);
    }
  };
  return Value{&t, i};
}

Value concat_cols(std::span<const Value> parts) {
  check(!parts.empty(), "concat_cols: no inputs");
  Tape& t = *parts[0].tape;
  const std::size_t n = parts[0].rows();
  std::size_t total = 0;
  for (const Value& p : parts) {
    check(p.tape == &t, "concat_cols: mixed tapes");
    check(p.rows() == n, "concat_cols: row mismatch");
    total += p.cols();
  }
  std::vector<double> out(n * total);
  std::vector<int> idxs;
  std::vector<std::size_t> widths;
  std::size_t off = 0;
  for (const Value& p : parts) {
    const auto& pv = p.data();
    const std::size_t w = p.cols();
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < w; ++j) out[r * total + off + j] = pv[r * w + j];
    idxs.push_back(p.idx);
    widths.push_back(w);
    off += w;
  }
  int i = t.push(n, total, std::move(out), nullptr);
  t.node(i).back = [i, idxs, widths, n, total](Tape& tp) {
    const auto& g = tp.node(i).grad;
    std::size_t off = 0;
    for (std::size_t p = 0; p < idxs.size(); ++p) {
      auto& gp = tp.node(idxs[p]).grad;
      const std::size_t w = widths[p];
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < w; ++j) gp[r * w + j] += g[r * total + off + j];
      off += w;
    }
  };
  return Value{&t, i};
}

Value gather_rows(Value x, const std::vector<int>& idx) {
  Tape& t = *x.tape;
  const std::size_t n = x.rows(), c = x.cols();
  for (int r : idx) check(r >= 0 && static_cast<std::size_t>(r) < n, "gather_rows: index out of range");
  std::vector<double> out(idx.size() * c);
  const auto& xv = x.data();
  for (std::size_t r = 0; r < idx.size(); ++r)
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = xv[idx[r] * c + j];
  int xi = x.idx;
  int i = t.push(idx.size(), c, std::move(out), nullptr);
  t.node(i).back = [i, xi, idx, c](Tape& tp) {
    const auto& g = tp.node(i).grad;
    auto& gx = tp.node(xi).grad;
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < c; ++j) gx[idx[r] * c + j] += g[r * c + j];
  };
  return Value{&t, i};
}

Value scatter_add_rows(Value src, const std::vector<int>& dst, std::size_t n_rows) {
  Tape& t = *src.tape;
  const std::size_t m = src.rows(), c = src.cols();
  check(dst.size() == m, "scatter_add_rows: index count mismatch");
  for (int r : dst) check(r >= 0 && static_cast<std::size_t>(r) < n_rows, "scatter_add_rows: index out of range");
  // Value-sorted accumulation per destination keeps the result invariant
  // under any reordering of the source rows.
  std::vector<std::vector<int>> buckets(n_rows);
  for (std::size_t r = 0; r < m; ++r) buckets[dst[r]].push_back(static_cast<int>(r));
  std::vector<double> out(n_rows * c, 0.0);
  const auto& sv = src.data();
  std::vector<double> scratch;
  for (std::size_t i = 0; i < n_rows; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      scratch.clear();
      for (int r : buckets[i]) scratch.push_back(sv[r * c + j]);
      out[i * c + j] = sorted_sum(scratch);
    }
  int si = src.idx;
  int i = t.push(n_rows, c, std::move(out), nullptr);
  t.node(i).back = [i, si, dst, c](Tape& tp) {
    const auto& g = tp.node(i).grad;
    auto& gs = tp.node(si).grad;
    for (std::size_t r = 0; r < dst.size(); ++r)
      for (std::size_t j = 0; j < c; ++j) gs[r * c + j] += g[dst[r] * c + j];
  };
  return Value{&t, i};
}

Value scale_rows(Value x, Value s) {
  check(x.tape == s.tape, "scale_rows: mixed tapes");
  check(s.rows() == x.rows() && s.cols() == 1, "scale_rows: scale must be n x 1");
  Tape& t = *x.tape;
  const std::size_t n = x.rows(), c = x.cols();
  std::vector<double> out = x.data();
  const auto& sv = s.data();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] *= sv[r];
  int xi = x.idx, si = s.idx;
  int i = t.push(n, c, std::move(out), nullptr);
  t.node(i).back = [i, xi, si, n, c](Tape& tp) {
    const auto& g = tp.node(i).grad;
    const auto& xv = tp.node(xi).val;
    const auto& sv = tp.node(si).val;
    auto& gx = tp.node(xi).grad;
    auto& gs = tp.node(si).grad;
    for (std::size_t r = 0; r < n; ++r) {
      double acc = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        gx[r * c + j] += g[r * c + j] * sv[r];
        acc += g[r * c + j] * xv[r * c + j];
      }
      gs[r] += acc;
    }
  };
  return Value{&t, i};
}

Value segment_softmax(Value logits, const std::vector<int>& seg, std::size_t n_seg) {
  Tape& t = *logits.tape;
  const std::size_t m = logits.rows();
  check(logits.cols() == 1, "segment_softmax: logits must be m x 1");
  check(seg.size() == m, "segment_softmax: segment count mismatch");
  for (int s : seg) check(s >= 0 && static_cast<std::size_t>(s) < n_seg, "segment_softmax: segment out of range");
  std::vector<std::vector<int>> buckets(n_seg);
  for (std::size_t r = 0; r < m; ++r) buckets[seg[r]].push_back(static_cast<int>(r));
  std::vector<double> out(m, 0.0);
  const auto& lv = logits.data();
  std::vector<double> scratch;
  for (const auto& b : buckets) {
    if (b.empty()) continue;  // vacuous softmax: no entries, no NaN
    double mx = lv[b[0]];
    for (int r : b) mx = std::max(mx, lv[r]);
    scratch.clear();
    for (int r : b) {
      out[r] = std::exp(lv[r] - mx);
      scratch.push_back(out[r]);
    }
    double denom = sorted_sum(scratch);
    for (int r : b) out[r] /= denom;
  }
  int li = logits.idx;
  int i = t.push(m, 1, std::move(out), nullptr);
  t.node(i).back = [i, li, buckets](Tape& tp) {
    const auto& g = tp.node(i).grad;
    const auto& s = tp.node(i).val;
    auto& gl = tp.node(li).grad;
    for (const auto& b : buckets) {
      double dot = 0.0;
      for (int r : b) dot += g[r] * s[r];
      for (int r : b) gl[r] += s[r] * (g[r] - dot);
    }
  };
  return Value{&t, i};
}

Value mean_rows(Value x) {
  Tape& t = *x.tape;
  const std::size_t n = x.rows(), c = x.cols();
  check(n >= 1, "mean_rows: empty input");
  std::vector<double> out(c, 0.0);
  const auto& xv = x.data();
  std::vector<double> scratch;
  for (std::size_t j = 0; j < c; ++j) {
    scratch.clear();
    for (std::size_t r = 0; r < n; ++r) scratch.push_back(xv[r * c + j]);
    out[j] = sorted_sum(scratch) / static_cast<double>(n);
  }
  int xi = x.idx;
  int i = t.push(1, c, std::move(out), nullptr);
  t.node(i).back = [i, xi, n, c](Tape& tp) {
    const auto& g = tp.node(i).grad;
    auto& gx = tp.node(xi).grad;
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += g[j] * inv;
  };
  return Value{&t, i};
}

Value sum_all(Value x) {
  Tape& t = *x.tape;
  std::vector<double> scratch(x.data());
  double s = sorted_sum(scratch);
  int xi = x.idx;
  int i = t.push(1, 1, {s}, nullptr);
  t.node(i).back = [i, xi](Tape& tp) {
    double g = tp.node(i).grad[0];
    auto& gx = tp.node(xi).grad;
    for (double& v : gx) v += g;
  };
  return Value{&t, i};
}

Value masked_bce(Value logits, const std::vector<int>& labels) {
  Tape& t = *logits.tape;
  check(logits.rows() == 1, "masked_bce: logits must be 1 x T");
  check(labels.size() == logits.cols(), "masked_bce: label count mismatch");
  const auto& z = logits.data();
  std::vector<int> present;
  for (std::size_t j = 0; j < labels.size(); ++j)
    if (labels[j] >= 0) present.push_back(static_cast<int>(j));
  check(!present.empty(), "masked_bce: all labels missing");
  std::vector<double> terms;
  for (int j : present) {
    double zj = z[j];
    double y = static_cast<double>(labels[j]);
    // stabilized: max(z,0) - z*y + log1p(exp(-|z|))
    terms.push_back(std::max(zj, 0.0) - zj * y + std::log1p(std::exp(-std::abs(zj))));
  }
  double loss = sorted_sum(terms) / static_cast<double>(present.size());
  int li = logits.idx;
  std::vector<int> lab = labels;
  int i = t.push(1, 1, {loss}, nullptr);
  t.node(i).back = [i, li, present, lab](Tape& tp) {
    double g = tp.node(i).grad[0] / static_cast<double>(present.size());
    const auto& z = tp.node(li).val;
    auto& gl = tp.node(li).grad;
    for (int j : present) {
      double zj = z[j];
      double s = zj >= 0.0 ? 1.0 / (1.0 + std::exp(-zj)) : std::exp(zj) / (1.0 + std::exp(zj));
      gl[j] += g * (s - static_cast<double>(lab[j]));
    }
  };
  return Value{&t, i};
}

Value affine(Tape& t, Value x, const ParamPtr& w, const ParamPtr& b) {
  Value wv = t.param(w);
  Value bv = t.param(b);
  return add_row_broadcast(matmul(x, wv), bv);
}

}  // namespace graft::ad
