#include "jm3d/core/tape.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <stdexcept>

namespace jm3d::nn {

Parameter& ParamStore::add(const std::string& name, Matrix init) {
  if (index_.count(name)) throw std::runtime_error("duplicate parameter name: " + name);
  owned_.push_back(std::make_unique<Parameter>(name, std::move(init)));
  Parameter* p = owned_.back().get();
  order_.push_back(p);
  index_[name] = p;
  return *p;
}

Parameter& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::runtime_error("unknown parameter: " + name);
  return *it->second;
}

const Parameter& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::runtime_error("unknown parameter: " + name);
  return *it->second;
}

Value Tape::push(Matrix out, bool needs_grad, std::function<void(Tape&)> back, Parameter* leaf) {
  Node n;
  n.out = std::move(out);
  n.back = std::move(back);
  n.leaf = leaf;
  n.needs_grad = needs_grad;
  nodes_.push_back(std::move(n));
  const int idx = static_cast<int>(nodes_.size()) - 1;
  return Value{idx, nodes_[idx].out.rows(), nodes_[idx].out.cols()};
}

Matrix& Tape::grad_buf(int idx) {
  Node& n = nodes_[idx];
  if (n.grad.empty()) n.grad = Matrix(n.out.rows(), n.out.cols());
  return n.grad;
}

namespace {
void add_into(Matrix& dst, const Matrix& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}
}  // namespace

Value Tape::constant(Matrix m) { return push(std::move(m), false, nullptr); }

Value Tape::leaf(Matrix m) { return push(std::move(m), true, nullptr); }

Value Tape::param(Parameter& p) {
  Parameter* pp = &p;
  Value v = push(p.value, true, nullptr, pp);
  const int self = v.idx;
  nodes_[self].back = [self, pp](Tape& t) { add_into(pp->grad, t.nodes_[self].grad); };
  return v;
}

Value Tape::add(Value a, Value b) {
  assert(a.rows == b.rows && a.cols == b.cols);
  Matrix out = nodes_[a.idx].out;
  add_into(out, nodes_[b.idx].out);
  Value v = push(std::move(out), wants(a) || wants(b), nullptr);
  const int self = v.idx, ai = a.idx, bi = b.idx;
  nodes_[self].back = [self, ai, bi](Tape& t) {
    const Matrix& g = t.nodes_[self].grad;
    if (t.wants_idx(ai)) add_into(t.grad_buf(ai), g);
    if (t.wants_idx(bi)) add_into(t.grad_buf(bi), g);
  };
  return v;
}

Value Tape::sub(Value a, Value b) {
  assert(a.rows == b.rows && a.cols == b.cols);
  Matrix out = nodes_[a.idx].out;
  const Matrix& bm = nodes_[b.idx].out;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bm[i];
  Value v = push(std::move(out), wants(a) || wants(b), nullptr);
  const int self = v.idx, ai = a.idx, bi = b.idx;
  nodes_[self].back = [self, ai, bi](Tape& t) {
    const Matrix& g = t.nodes_[self].grad;
    if (t.wants_idx(ai)) add_into(t.grad_buf(ai), g);
    if (t.wants_idx(bi)) {
      Matrix& gb = t.grad_buf(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  };
  return v;
}

Value Tape::mul(Value a, Value b) {
  assert(a.rows == b.rows && a.cols == b.cols);
  Matrix out = nodes_[a.idx].out;
  const Matrix& bm = nodes_[b.idx].out;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bm[i];
  Value v = push(std::move(out), wants(a) || wants(b), nullptr);
  const int self = v.idx, ai = a.idx, bi = b.idx;
  nodes_[self].back = [self, ai, bi](Tape& t) {
    const Matrix& g = t.nodes_[self].grad;
    const Matrix& av = t.nodes_[ai].out;
    const Matrix& bv = t.nodes_[bi].out;
    if (t.wants_idx(ai)) {
      Matrix& ga = t.grad_buf(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.wants_idx(bi)) {
      Matrix& gb = t.grad_buf(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  };
  return v;
}

Value Tape::div(Value a, Value b) {
  assert(a.rows == b.rows && a.cols == b.cols);
  Matrix out = nodes_[a.idx].out;
  const Matrix& bm = nodes_[b.idx].out;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= bm[i];
  Value v = push(std::move(out), wants(a) || wants(b), nullptr);
  const int self = v.idx, ai = a.idx, bi = b.idx;
  nodes_[self].back = [self, ai, bi](Tape& t) {
    const Matrix& g = t.nodes_[self].grad;
    const Matrix& av = t.nodes_[ai].out;
    const Matrix& bv = t.nodes_[bi].out;
    if (t.wants_idx(ai)) {
      Matrix& ga = t.grad_buf(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bv[i];
    }
    if (t.wants_idx(bi)) {
      Matrix& gb = t.grad_buf(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * av[i] / (bv[i] * bv[i]);
    }
  };
  return v;
}

Value Tape::scale(Value a, double c) {
  Matrix out = nodes_[a.idx].out;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
  Value v = push(std::move(out), wants(a), nullptr);
  const int self = v.idx, ai = a.idx;
  nodes_[self].back = [self, ai, c](Tape& t) {
    const Matrix& g = t.nodes_[self].grad;
    if (!t.wants_idx(ai)) return;
    Matrix& ga = t.grad_buf(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
  };
  return v;
}

Value Tape::matmul(Value a, Value b) {
  assert(a.cols == b.rows);
  Matrix out = jm3d::matmul(nodes_[a.idx].out, nodes_[b.idx].out);
  Value v = push(std::move(out), wants(a) || wants(b), nullptr);
  const int self = v.idx, ai = a.idx, bi = b.idx;
  nodes_[self].back = [self, ai, bi](Tape& t) {
    const Matrix& g = t.nodes_[self].grad;
    if (t.wants_idx(ai)) matmul_acc(g, jm3d::transpose(t.nodes_[bi].out), t.grad_buf(ai));
    if (t.wants_idx(bi)) matmul_acc(jm3d::transpose(t.nodes_[ai].out), g, t.grad_buf(bi));
  };
  return v;
}

Value Tape::transpose(Value a) {
  Value v = push(jm3d::transpose(nodes_[a.idx].out), wants(a), nullptr);
  const int self = v.idx, ai = a.idx;
  nodes_[self].back = [self, ai](Tape& t) {
    if (!t.wants_idx(ai)) return;
    add_into(t.grad_buf(ai), jm3d::transpose(t.nodes_[self].grad));
  };
  return v;
}

Value Tape::tanh(Value a) {
  Matrix out = nodes_[a.idx].out;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
  Value v = push(std::move(out), wants(a), nullptr);
  const int self = v.idx, ai = a.idx;
  nodes_[self].back = [self, ai](Tape& t) {
    if (!t.wants_idx(ai)) return;
    const Matrix& g = t.nodes_[self].grad;
    const Matrix& y = t.nodes_[self].out;
    Matrix& ga = t.grad_buf(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  };
  return v;
}

Value Tape::exp(Value a) {
  Matrix out = nodes_[a.idx].out;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(out[i]);
  Value v = push(std::move(out), wants(a), nullptr);
  const int self = v.idx, ai = a.idx;
  nodes_[self].back = [self, ai](Tape& t) {
    if (!t.wants_idx(ai)) return;
    const Matrix& g = t.nodes_[self].grad;
    const Matrix& y = t.nodes_[self].out;
    Matrix& ga = t.grad_buf(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
  };
  return v;
}

Value Tape::row_softmax(Value a) {
  Matrix out = nodes_[a.idx].out;
  for (int r = 0; r < out.rows(); ++r) {
    double* row = out.row_ptr(r);
    double mx = row[0];
    for (int c = 1; c < out.cols(); ++c) mx = std::max(mx, row[c]);
    double z = 0.0;
    for (int c = 0; c < out.cols(); ++c) {
      row[c] = std::exp(row[c] - mx);
      z += row[c];
    }
    for (int c = 0; c < out.cols(); ++c) row[c] /= z;
  }
  Value v = push(std::move(out), wants(a), nullptr);
  const int self = v.idx, ai = a.idx;
  nodes_[self].back = [self, ai](Tape& t) {
    if (!t.wants_idx(ai)) return;
    const Matrix& g = t.nodes_[self].grad;
    const Matrix& y = t.nodes_[self].out;
    Matrix& ga = t.grad_buf(ai);
    for (int r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (int c = 0; c < y.cols(); ++c) dot += g.at(r, c) * y.at(r, c);
      for (int c = 0; c < y.cols(); ++c) ga.at(r, c) += y.at(r, c) * (g.at(r, c) - dot);
    }
  };
  return v;
}

Value Tape::row_log_softmax(Value a) {
  Matrix out = nodes_[a.idx].out;
  for (int r = 0; r < out.rows(); ++r) {
    double* row = out.row_ptr(r);
    double mx = row[0];
    for (int c = 1; c < out.cols(); ++c) mx = std::max(mx, row[c]);
    double z = 0.0;
    for (int c = 0; c < out.cols(); ++c) z += std::exp(row[c] - mx);
    const double lse = mx + std::log(z);
    for (int c = 0; c < out.cols(); ++c) row[c] -= lse;
  }
  Value v = push(std::move(out), wants(a), nullptr);
  const int self = v.idx, ai = a.idx;
  nodes_[self].back = [self, ai](Tape& t) {
    if (!t.wants_idx(ai)) return;
    const Matrix& g = t.nodes_[self].grad;
    const Matrix& y = t.nodes_[self].out;
    Matrix& ga = t.grad_buf(ai);
    for (int r = 0; r < y.rows(); ++r) {
      double gsum = 0.0;
      for (int c = 0; c < y.cols(); ++c) gsum += g.at(r, c);
      for (int c = 0; c < y.cols(); ++c) ga.at(r, c) += g.at(r, c) - std::exp(y.at(r, c)) * gsum;
    }
  };
  return v;
}

Value Tape::row_standardize(Value a, double eps) {
  const Matrix& x = nodes_[a.idx].out;
  Matrix out(x.rows(), x.cols());
  Matrix sigmas(x.rows(), 1);
  const int C = x.cols();
  for (int r = 0; r < x.rows(); ++r) {
    double mean = 0.0;
    for (int c = 0; c < C; ++c) mean += x.at(r, c);
    mean /= C;
    double var = 0.0;
    for (int c = 0; c < C; ++c) {
      const double d = x.at(r, c) - mean;
      var += d * d;
    }
    var /= C;
    const double sigma = std::sqrt(var + eps);
    sigmas.at(r, 0) = sigma;
    for (int c = 0; c < C; ++c) out.at(r, c) = (x.at(r, c) - mean) / sigma;
  }
  Value v = push(std::move(out), wants(a), nullptr);
  const int self = v.idx, ai = a.idx;
  nodes_[self].back = [self, ai, sigmas](Tape& t) {
    if (!t.wants_idx(ai)) return;
    const Matrix& g = t.nodes_[self].grad;
    const Matrix& y = t.nodes_[self].out;
    Matrix& ga = t.grad_buf(ai);
    const int C = y.cols();
    for (int r = 0; r < y.rows(); ++r) {
      double gmean = 0.0, gymean = 0.0;
      for (int c = 0; c < C; ++c) {
        gmean += g.at(r, c);
        gymean += g.at(r, c) * y.at(r, c);
      }
      gmean /= C;
      gymean /= C;
      const double inv_sigma = 1.0 / sigmas.at(r, 0);
      for (int c = 0; c < C; ++c)
        ga.at(r, c) += inv_sigma * (g.at(r, c) - gmean - y.at(r, c) * gymean);
    }
  };
  return v;
}

Value Tape::row_l2norm(Value a, double floor) {
  const Matrix& x = nodes_[a.idx].out;
  Matrix out(x.rows(), x.cols());
  Matrix norms(x.rows(), 1);
  Matrix floored(x.rows(), 1);
  for (int r = 0; r < x.rows(); ++r) {
    double n2 = 0.0;
    for (int c = 0; c < x.cols(); ++c) n2 += x.at(r, c) * x.at(r, c);
    const double n = std::sqrt(n2);
    const bool is_floored = n < floor;
    const double d = is_floored ? floor : n;
    norms.at(r, 0) = d;
    floored.at(r, 0) = is_floored ? 1.0 : 0.0;
    for (int c = 0; c < x.cols(); ++c) out.at(r, c) = x.at(r, c) / d;
  }
  Value v = push(std::move(out), wants(a), nullptr);
  const int self = v.idx, ai = a.idx;
  nodes_[self].back = [self, ai, norms, floored](Tape& t) {
    if (!t.wants_idx(ai)) return;
    const Matrix& g = t.nodes_[self].grad;
    const Matrix& y = t.nodes_[self].out;
    Matrix& ga = t.grad_buf(ai);
    for (int r = 0; r < y.rows(); ++r) {
      const double inv = 1.0 / norms.at(r, 0);
      if (floored.at(r, 0) > 0.5) {
        for (int c = 0; c < y.cols(); ++c) ga.at(r, c) += g.at(r, c) * inv;
      } else {
        double dot = 0.0;
        for (int c = 0; c < y.cols(); ++c) dot += g.at(r, c) * y.at(r, c);
        for (int c = 0; c < y.cols(); ++c) ga.at(r, c) += inv * (g.at(r, c) - y.at(r, c) * dot);
      }
    }
  };
  return v;
}

Value Tape::add_rowvec(Value m, Value rv) {
  assert(rv.rows == 1 && rv.cols == m.cols);
  Matrix out = nodes_[m.idx].out;
  const Matrix& r = nodes_[rv.idx].out;
  for (int i = 0; i < out.rows(); ++i)
    for (int c = 0; c < out.cols(); ++c) out.at(i, c) += r.at(0, c);
  Value v = push(std::move(out), wants(m) || wants(rv), nullptr);
  const int self = v.idx, mi = m.idx, ri = rv.idx;
  nodes_[self].back = [self, mi, ri](Tape& t) {
    const Matrix& g = t.nodes_[self].grad;
    if (t.wants_idx(mi)) add_into(t.grad_buf(mi), g);
    if (t.wants_idx(ri)) {
      Matrix& gr = t.grad_buf(ri);
      for (int i = 0; i < g.rows(); ++i)
        for (int c = 0; c < g.cols(); ++c) gr.at(0, c) += g.at(i, c);
    }
  };
  return v;
}

Value Tape::mul_rowvec(Value m, Value rv) {
  assert(rv.rows == 1 && rv.cols == m.cols);
  Matrix out = nodes_[m.idx].out;
  const Matrix& r = nodes_[rv.idx].out;
  for (int i = 0; i < out.rows(); ++i)
    for (int c = 0; c < out.cols(); ++c) out.at(i, c) *= r.at(0, c);
  Value v = push(std::move(out), wants(m) || wants(rv), nullptr);
  const int self = v.idx, mi = m.idx, ri = rv.idx;
  nodes_[self].back = [self, mi, ri](Tape& t) {
    const Matrix& g = t.nodes_[self].grad;
    const Matrix& mv = t.nodes_[mi].out;
    const Matrix& r = t.nodes_[ri].out;
    if (t.wants_idx(mi)) {
      Matrix& gm = t.grad_buf(mi);
      for (int i = 0; i < g.rows(); ++i)
        for (int c = 0; c < g.cols(); ++c) gm.at(i, c) += g.at(i, c) * r.at(0, c);
    }
    if (t.wants_idx(ri)) {
      Matrix& gr = t.grad_buf(ri);
      for (int i = 0; i < g.rows(); ++i)
        for (int c = 0; c < g.cols(); ++c) gr.at(0, c) += g.at(i, c) * mv.at(i, c);
    }
  };
  return v;
}

Value Tape::mul_colvec(Value m, Value cv) {
  assert(cv.cols == 1 && cv.rows == m.rows);
  Matrix out = nodes_[m.idx].out;
  const Matrix& c = nodes_[cv.idx].out;
  for (int i = 0; i < out.rows(); ++i)
    for (int j = 0; j < out.cols(); ++j) out.at(i, j) *= c.at(i, 0);
  Value v = push(std::move(out), wants(m) || wants(cv), nullptr);
  const int self = v.idx, mi = m.idx, ci = cv.idx;
  nodes_[self].back = [self, mi, ci](Tape& t) {
    const Matrix& g = t.nodes_[self].grad;
    const Matrix& mv = t.nodes_[mi].out;
    const Matrix& c = t.nodes_[ci].out;
    if (t.wants_idx(mi)) {
      Matrix& gm = t.grad_buf(mi);
      for (int i = 0; i < g.rows(); ++i)
        for (int j = 0; j < g.cols(); ++j) gm.at(i, j) += g.at(i, j) * c.at(i, 0);
    }
    if (t.wants_idx(ci)) {
      Matrix& gc = t.grad_buf(ci);
      for (int i = 0; i < g.rows(); ++i) {
        double s = 0.0;
        for (int j = 0; j < g.cols(); ++j) s += g.at(i, j) * mv.at(i, j);
        gc.at(i, 0) += s;
      }
    }
  };
  return v;
}

Value Tape::row_sum(Value m) {
  const Matrix& x = nodes_[m.idx].out;
  Matrix out(x.rows(), 1);
  for (int i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (int j = 0; j < x.cols(); ++j) s += x.at(i, j);
    out.at(i, 0) = s;
  }
  Value v = push(std::move(out), wants(m), nullptr);
  const int self = v.idx, mi = m.idx;
  nodes_[self].back = [self, mi](Tape& t) {
    if (!t.wants_idx(mi)) return;
    const Matrix& g = t.nodes_[self].grad;
    Matrix& gm = t.grad_buf(mi);
    for (int i = 0; i < gm.rows(); ++i)
      for (int j = 0; j < gm.cols(); ++j) gm.at(i, j) += g.at(i, 0);
  };
  return v;
}

Value Tape::colmax(Value m) { return segment_colmax(m, m.rows); }

Value Tape::segment_colmax(Value m, int segment) {
  assert(segment >= 1 && m.rows % segment == 0);
  const Matrix& x = nodes_[m.idx].out;
  const int groups = m.rows / segment;
  Matrix out(groups, m.cols);
  std::vector<int> argmax(static_cast<std::size_t>(groups) * m.cols);
  for (int gi = 0; gi < groups; ++gi) {
    for (int c = 0; c < m.cols; ++c) {
      int best = gi * segment;
      double bv = x.at(best, c);
      for (int r = gi * segment + 1; r < (gi + 1) * segment; ++r) {
        if (x.at(r, c) > bv) {
          bv = x.at(r, c);
          best = r;
        }
      }
      out.at(gi, c) = bv;
      argmax[static_cast<std::size_t>(gi) * m.cols + c] = best;
    }
  }
  Value v = push(std::move(out), wants(m), nullptr);
  const int self = v.idx, mi = m.idx;
  nodes_[self].back = [self, mi, argmax](Tape& t) {
    if (!t.wants_idx(mi)) return;
    const Matrix& g = t.nodes_[self].grad;
    Matrix& gm = t.grad_buf(mi);
    for (int gi = 0; gi < g.rows(); ++gi)
      for (int c = 0; c < g.cols(); ++c)
        gm.at(argmax[static_cast<std::size_t>(gi) * g.cols() + c], c) += g.at(gi, c);
  };
  return v;
}

Value Tape::segment_sum(Value m, int segment) {
  assert(segment >= 1 && m.rows % segment == 0);
  const Matrix& x = nodes_[m.idx].out;
  const int groups = m.rows / segment;
  Matrix out(groups, m.cols);
  for (int gi = 0; gi < groups; ++gi)
    for (int r = gi * segment; r < (gi + 1) * segment; ++r)
      for (int c = 0; c < m.cols; ++c) out.at(gi, c) += x.at(r, c);
  Value v = push(std::move(out), wants(m), nullptr);
  const int self = v.idx, mi = m.idx;
  nodes_[self].back = [self, mi, segment](Tape& t) {
    if (!t.wants_idx(mi)) return;
    const Matrix& g = t.nodes_[self].grad;
    Matrix& gm = t.grad_buf(mi);
    for (int r = 0; r < gm.rows(); ++r)
      for (int c = 0; c < gm.cols(); ++c) gm.at(r, c) += g.at(r / segment, c);
  };
  return v;
}

Value Tape::segment_repeat(Value m, int repeat) {
  assert(repeat >= 1);
  const Matrix& x = nodes_[m.idx].out;
  Matrix out(m.rows * repeat, m.cols);
  for (int r = 0; r < out.rows(); ++r)
    for (int c = 0; c < m.cols; ++c) out.at(r, c) = x.at(r / repeat, c);
  Value v = push(std::move(out), wants(m), nullptr);
  const int self = v.idx, mi = m.idx;
  nodes_[self].back = [self, mi, repeat](Tape& t) {
    if (!t.wants_idx(mi)) return;
    const Matrix& g = t.nodes_[self].grad;
    Matrix& gm = t.grad_buf(mi);
    for (int r = 0; r < g.rows(); ++r)
      for (int c = 0; c < g.cols(); ++c) gm.at(r / repeat, c) += g.at(r, c);
  };
  return v;
}

Value Tape::gather_rows(Value table, const std::vector<int>& ids) {
  const Matrix& x = nodes_[table.idx].out;
  Matrix out(static_cast<int>(ids.size()), table.cols);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    assert(ids[i] >= 0 && ids[i] < table.rows);
    for (int c = 0; c < table.cols; ++c) out.at(static_cast<int>(i), c) = x.at(ids[i], c);
  }
  Value v = push(std::move(out), wants(table), nullptr);
  const int self = v.idx, ti = table.idx;
  nodes_[self].back = [self, ti, ids](Tape& t) {
    if (!t.wants_idx(ti)) return;
    const Matrix& g = t.nodes_[self].grad;
    Matrix& gt = t.grad_buf(ti);
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (int c = 0; c < g.cols(); ++c) gt.at(ids[i], c) += g.at(static_cast<int>(i), c);
  };
  return v;
}

Value Tape::pick_per_row(Value m, const std::vector<int>& ids) {
  assert(static_cast<int>(ids.size()) == m.rows);
  const Matrix& x = nodes_[m.idx].out;
  Matrix out(m.rows, 1);
  for (int r = 0; r < m.rows; ++r) {
    assert(ids[r] >= 0 && ids[r] < m.cols);
    out.at(r, 0) = x.at(r, ids[r]);
  }
  Value v = push(std::move(out), wants(m), nullptr);
  const int self = v.idx, mi = m.idx;
  nodes_[self].back = [self, mi, ids](Tape& t) {
    if (!t.wants_idx(mi)) return;
    const Matrix& g = t.nodes_[self].grad;
    Matrix& gm = t.grad_buf(mi);
    for (int r = 0; r < g.rows(); ++r) gm.at(r, ids[r]) += g.at(r, 0);
  };
  return v;
}

Value Tape::vconcat(Value a, Value b) {
  assert(a.cols == b.cols);
  const Matrix& am = nodes_[a.idx].out;
  const Matrix& bm = nodes_[b.idx].out;
  Matrix out(a.rows + b.rows, a.cols);
  for (int r = 0; r < a.rows; ++r)
    for (int c = 0; c < a.cols; ++c) out.at(r, c) = am.at(r, c);
  for (int r = 0; r < b.rows; ++r)
    for (int c = 0; c < b.cols; ++c) out.at(a.rows + r, c) = bm.at(r, c);
  Value v = push(std::move(out), wants(a) || wants(b), nullptr);
  const int self = v.idx, ai = a.idx, bi = b.idx, arows = a.rows;
  nodes_[self].back = [self, ai, bi, arows](Tape& t) {
    const Matrix& g = t.nodes_[self].grad;
    if (t.wants_idx(ai)) {
      Matrix& ga = t.grad_buf(ai);
      for (int r = 0; r < ga.rows(); ++r)
        for (int c = 0; c < ga.cols(); ++c) ga.at(r, c) += g.at(r, c);
    }
    if (t.wants_idx(bi)) {
      Matrix& gb = t.grad_buf(bi);
      for (int r = 0; r < gb.rows(); ++r)
        for (int c = 0; c < gb.cols(); ++c) gb.at(r, c) += g.at(arows + r, c);
    }
  };
  return v;
}

Value Tape::hconcat(Value a, Value b) {
  assert(a.rows == b.rows);
  const Matrix& am = nodes_[a.idx].out;
  const Matrix& bm = nodes_[b.idx].out;
  Matrix out(a.rows, a.cols + b.cols);
  for (int r = 0; r < a.rows; ++r) {
    for (int c = 0; c < a.cols; ++c) out.at(r, c) = am.at(r, c);
    for (int c = 0; c < b.cols; ++c) out.at(r, a.cols + c) = bm.at(r, c);
  }
  Value v = push(std::move(out), wants(a) || wants(b), nullptr);
  const int self = v.idx, ai = a.idx, bi = b.idx, acols = a.cols;
  nodes_[self].back = [self, ai, bi, acols](Tape& t) {
    const Matrix& g = t.nodes_[self].grad;
    if (t.wants_idx(ai)) {
      Matrix& ga = t.grad_buf(ai);
      for (int r = 0; r < ga.rows(); ++r)
        for (int c = 0; c < ga.cols(); ++c) ga.at(r, c) += g.at(r, c);
    }
    if (t.wants_idx(bi)) {
      Matrix& gb = t.grad_buf(bi);
      for (int r = 0; r < gb.rows(); ++r)
        for (int c = 0; c < gb.cols(); ++c) gb.at(r, c) += g.at(r, acols + c);
    }
  };
  return v;
}

Value Tape::slice_cols(Value a, int col) {
  assert(col >= 0 && col < a.cols);
  const Matrix& x = nodes_[a.idx].out;
  Matrix out(a.rows, 1);
  for (int r = 0; r < a.rows; ++r) out.at(r, 0) = x.at(r, col);
  Value v = push(std::move(out), wants(a), nullptr);
  const int self = v.idx, ai = a.idx;
  nodes_[self].back = [self, ai, col](Tape& t) {
    if (!t.wants_idx(ai)) return;
    const Matrix& g = t.nodes_[self].grad;
    Matrix& ga = t.grad_buf(ai);
    for (int r = 0; r < g.rows(); ++r) ga.at(r, col) += g.at(r, 0);
  };
  return v;
}

Value Tape::sqrt_eps(Value a, double eps) {
  Matrix out = nodes_[a.idx].out;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(out[i] + eps);
  Value v = push(std::move(out), wants(a), nullptr);
  const int self = v.idx, ai = a.idx;
  nodes_[self].back = [self, ai](Tape& t) {
    if (!t.wants_idx(ai)) return;
    const Matrix& g = t.nodes_[self].grad;
    const Matrix& y = t.nodes_[self].out;
    Matrix& ga = t.grad_buf(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * 0.5 / y[i];
  };
  return v;
}

Value Tape::slice_rows(Value a, int start, int len) {
  assert(start >= 0 && len >= 0 && start + len <= a.rows);
  const Matrix& x = nodes_[a.idx].out;
  Matrix out(len, a.cols);
  for (int r = 0; r < len; ++r)
    for (int c = 0; c < a.cols; ++c) out.at(r, c) = x.at(start + r, c);
  Value v = push(std::move(out), wants(a), nullptr);
  const int self = v.idx, ai = a.idx;
  nodes_[self].back = [self, ai, start](Tape& t) {
    if (!t.wants_idx(ai)) return;
    const Matrix& g = t.nodes_[self].grad;
    Matrix& ga = t.grad_buf(ai);
    for (int r = 0; r < g.rows(); ++r)
      for (int c = 0; c < g.cols(); ++c) ga.at(start + r, c) += g.at(r, c);
  };
  return v;
}

Value Tape::sum_all(Value a) {
  const Matrix& x = nodes_[a.idx].out;
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i];
  Value v = push(Matrix(1, 1, {s}), wants(a), nullptr);
  const int self = v.idx, ai = a.idx;
  nodes_[self].back = [self, ai](Tape& t) {
    if (!t.wants_idx(ai)) return;
    const double g = t.nodes_[self].grad.at(0, 0);
    Matrix& ga = t.grad_buf(ai);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  };
  return v;
}

Value Tape::mean_all(Value a) {
  const Matrix& x = nodes_[a.idx].out;
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i];
  const double inv = x.empty() ? 0.0 : 1.0 / static_cast<double>(x.size());
  Value v = push(Matrix(1, 1, {s * inv}), wants(a), nullptr);
  const int self = v.idx, ai = a.idx;
  nodes_[self].back = [self, ai, inv](Tape& t) {
    if (!t.wants_idx(ai)) return;
    const double g = t.nodes_[self].grad.at(0, 0) * inv;
    Matrix& ga = t.grad_buf(ai);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  };
  return v;
}

void Tape::backward(Value loss) {
  assert(loss.rows == 1 && loss.cols == 1);
  if (!nodes_[loss.idx].needs_grad) return;
  grad_buf(loss.idx).at(0, 0) += 1.0;
  for (int i = loss.idx; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.empty() || !n.back) continue;
    n.back(*this);
  }
}

}  // namespace jm3d::nn
