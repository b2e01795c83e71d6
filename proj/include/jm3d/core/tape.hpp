#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "jm3d/core/matrix.hpp"

namespace jm3d::nn {

/// A named trainable tensor with its gradient and AdamW moment buffers.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix moment1;
  Matrix moment2;

  Parameter(std::string n, Matrix v)
      : name(std::move(n)),
        value(std::move(v)),
        grad(value.rows(), value.cols()),
        moment1(value.rows(), value.cols()),
        moment2(value.rows(), value.cols()) {}

  void zero_grad() {
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = 0.0;
  }
};

/// Owns parameters in registration order. Order is part of the checkpoint
/// contract, so insertion order must be deterministic.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Matrix init);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::vector<Parameter*>& all() { return order_; }
  const std::vector<Parameter*>& all() const { return order_; }

  void zero_grads() {
    for (auto* p : order_) p->zero_grad();
  }

 private:
  std::vector<std::unique_ptr<Parameter>> owned_;
  std::vector<Parameter*> order_;
  std::map<std::string, Parameter*> index_;
};

struct Value {
  int idx = -1;
  int rows = 0;
  int cols = 0;
};

/// Reverse-mode tape. Build a graph with the ops below, call backward() on a
/// 1x1 loss, and gradients accumulate into the Parameters that were staged
/// with param(). One tape per forward pass; tapes are not reused.
class Tape {
 public:
  Value constant(Matrix m);
  /// Leaf whose gradient is retained (for checking d loss / d input).
  Value leaf(Matrix m);
  Value param(Parameter& p);

  Value add(Value a, Value b);
  Value sub(Value a, Value b);
  Value mul(Value a, Value b);
  Value div(Value a, Value b);
  Value scale(Value a, double c);
  Value matmul(Value a, Value b);
  Value transpose(Value a);
  Value tanh(Value a);
  Value exp(Value a);

  Value row_softmax(Value a);
  Value row_log_softmax(Value a);
  /// Row-wise standardization, (x - mean) / sqrt(var + eps). No affine part.
  Value row_standardize(Value a, double eps);
  /// Row-wise x / max(||x||, floor).
  Value row_l2norm(Value a, double floor = 1e-12);

  Value add_rowvec(Value m, Value rv);
  Value mul_rowvec(Value m, Value rv);
  Value mul_colvec(Value m, Value cv);
  Value row_sum(Value m);

  Value colmax(Value m);
  Value segment_colmax(Value m, int segment);
  Value segment_sum(Value m, int segment);
  Value segment_repeat(Value m, int repeat);

  Value gather_rows(Value table, const std::vector<int>& ids);
  Value pick_per_row(Value m, const std::vector<int>& ids);
  Value vconcat(Value a, Value b);
  Value hconcat(Value a, Value b);
  Value slice_rows(Value a, int start, int len);
  /// Single column as an N x 1 matrix.
  Value slice_cols(Value a, int col);
  /// Elementwise sqrt(x + eps); inputs must keep x + eps > 0.
  Value sqrt_eps(Value a, double eps);

  Value sum_all(Value a);
  Value mean_all(Value a);

  /// matmul(x, w) + broadcast bias row.
  Value affine(Value x, Parameter& w, Parameter& b) { return add_rowvec(matmul(x, param(w)), param(b)); }

  const Matrix& value(Value v) const { return nodes_[v.idx].out; }
  double scalar(Value v) const { return nodes_[v.idx].out.at(0, 0); }
  /// Gradient of the last backward() target w.r.t. v (empty if not reached).
  const Matrix& grad(Value v) const { return nodes_[v.idx].grad; }

  void backward(Value loss);

 private:
  struct Node {
    Matrix out;
    Matrix grad;
    std::function<void(Tape&)> back;
    Parameter* leaf = nullptr;
    bool needs_grad = false;
  };

  Value push(Matrix out, bool needs_grad, std::function<void(Tape&)> back, Parameter* leaf = nullptr);
  bool wants(Value v) const { return nodes_[v.idx].needs_grad; }
  bool wants_idx(int idx) const { return nodes_[idx].needs_grad; }
  Matrix& grad_buf(int idx);

  std::vector<Node> nodes_;
  friend struct TapeAccess;
};

}  // namespace jm3d::nn
