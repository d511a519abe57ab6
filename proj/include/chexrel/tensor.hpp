#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "chexrel/error.hpp"
#include "chexrel/rng.hpp"

namespace chexrel::nd {

using Index = std::int64_t;
using Shape = std::vector<Index>;

Index numel_of(const Shape& s);
std::string shape_str(const Shape& s);

// One tape node. Value buffers are written once at construction and treated
// as immutable afterwards, except for named parameters which the optimizer
// updates in place between tape builds.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until backward reaches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;  // reads this->grad, accumulates into parents
  const char* op = "leaf";

  Index numel() const { return static_cast<Index>(value.size()); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double v);
  // leaf with requires_grad, i.e. a trainable parameter
  static Tensor param(Shape shape, std::vector<double> data);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  Index numel() const { return node_->numel(); }
  Index rows() const;
  Index cols() const;
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const double> data() const { return node_->value; }
  std::span<double> mutable_data() { return node_->value; }
  double at(Index i) const { return node_->value[static_cast<size_t>(i)]; }
  double at(Index r, Index c) const;
  double value() const;  // scalar tensors only

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad; }
  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }
  void drop_grad() { node_->grad.clear(); }

  std::shared_ptr<Node> node() const { return node_; }
  static Tensor wrap(std::shared_ptr<Node> n) { return Tensor(std::move(n)); }

 private:
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
  std::shared_ptr<Node> node_;
};

// throws ErrorKind::numeric when any element is NaN or Inf
void check_finite(const Tensor& t, const char* what = "tensor");

enum class Act { leaky_relu, elu, sigmoid };

Act parse_act(const std::string& name);
std::string act_name(Act a);

// Directed edge list with CSR groupings by destination and by source.
// Grouped orderings fix the accumulation order of scatter kernels, keeping
// them deterministic under OpenMP.
struct EdgeSet {
  Index num_nodes = 0;
  std::vector<std::int32_t> src, dst;
  std::vector<std::int32_t> dst_ptr, dst_order;  // edges grouped by dst
  std::vector<std::int32_t> src_ptr, src_order;  // edges grouped by src

  Index num_edges() const { return static_cast<Index>(src.size()); }
  static EdgeSet build(Index num_nodes, std::vector<std::int32_t> src, std::vector<std::int32_t> dst);
  // same edges replicated `batch` times with node offsets b*num_nodes
  EdgeSet replicate(Index batch) const;
};

// --- traced operations ------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
// X[m x n] + row bias b[n]
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor sum(const Tensor& a);
Tensor activation(const Tensor& x, Act kind, double leaky_slope = 0.2);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor select_rows(const Tensor& x, std::vector<std::int32_t> row_ids);
// repeats the full column block `reps` times: [m x c] -> [m x reps*c]
Tensor tile_cols(const Tensor& x, Index reps);
// picks the contiguous column group [gid*group, (gid+1)*group) of each row
Tensor select_col_groups(const Tensor& x, std::vector<std::int32_t> group_ids, Index group);

// s_e = sum_f a[f]*Wh[dst_e,f] + a[d+f]*Wh[src_e,f]   (a has length 2d)
Tensor edge_score(const Tensor& Wh, const std::shared_ptr<const EdgeSet>& edges, const Tensor& a);
// per-destination softmax over edge scores, max-subtracted per segment
Tensor segment_softmax(const Tensor& scores, std::vector<std::int32_t> segment_of, Index num_segments);
// out[dst_e,:] += alpha_e * Wh[src_e,:]
Tensor scatter_weighted_rows(const Tensor& alpha, const Tensor& Wh,
                             const std::shared_ptr<const EdgeSet>& edges);
// per-block dense matmul against a constant matrix M[n x n]; H is (batch*n) x d
Tensor block_matmul(const std::shared_ptr<const std::vector<double>>& M, Index n, const Tensor& h);
// inverted dropout on the flat buffer; identity when !training or p == 0
Tensor dropout(const Tensor& x, double p, bool training, StreamRng* rng);

// mean over masked cells of the numerically stable binary cross entropy
Tensor bce_with_logits(const Tensor& logits, const Tensor& labels, const Tensor& mask);
// mean softmax cross entropy of logits[N x C] against integer targets
Tensor softmax_xent(const Tensor& logits, std::vector<std::int32_t> targets);

// reverse pass from a scalar; accumulates into .grad of every node on the tape
void backward(const Tensor& loss);

// true when a stochastic op (active dropout) executed since the last reset;
// used by grad_check to reject non-deterministic functions
void reset_stochastic_trace();
bool stochastic_trace_hit();

double bce_scalar(double logit, double label);  // single stable-form term

}  // namespace chexrel::nd
