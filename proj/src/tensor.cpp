#include "chexrel/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>

#include "chexrel/kernels.hpp"

namespace chexrel::nd {

namespace {
thread_local bool g_stochastic_hit = false;

constexpr Index kOmpCutoff = 16 * 1024;

bool big(Index n) { return kernels::parallel_enabled() && n >= kOmpCutoff; }

std::shared_ptr<Node> make_node(Shape shape, std::vector<double> value) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  return n;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    fail(ErrorKind::dimension, std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                   " vs " + shape_str(b.shape()));
}

Tensor finish(std::shared_ptr<Node> out, const char* op,
              std::vector<std::shared_ptr<Node>> parents,
              std::function<void(Node&)> backward) {
  out->op = op;
  bool needs = false;
  for (const auto& p : parents)
    if (p->requires_grad) needs = true;
  out->requires_grad = needs;
  if (needs) {
    out->parents = std::move(parents);
    out->backward = std::move(backward);
  }
  return Tensor::wrap(std::move(out));
}
}  // namespace

Index numel_of(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = make_node(shape, std::vector<double>(static_cast<size_t>(numel_of(shape)), 0.0));
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  auto n = make_node(shape, std::vector<double>(static_cast<size_t>(numel_of(shape)), v));
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  if (numel_of(shape) != static_cast<Index>(data.size()))
    fail(ErrorKind::dimension, "tensor data size " + std::to_string(data.size()) +
                                   " does not match shape " + shape_str(shape));
  auto n = make_node(std::move(shape), std::move(data));
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

Tensor Tensor::param(Shape shape, std::vector<double> data) {
  return from(std::move(shape), std::move(data), true);
}

Index Tensor::rows() const {
  if (node_->shape.size() != 2) fail(ErrorKind::dimension, "rows(): tensor is not 2-D");
  return node_->shape[0];
}

Index Tensor::cols() const {
  if (node_->shape.size() != 2) fail(ErrorKind::dimension, "cols(): tensor is not 2-D");
  return node_->shape[1];
}

double Tensor::at(Index r, Index c) const { return node_->value[static_cast<size_t>(r * cols() + c)]; }

double Tensor::value() const {
  if (numel() != 1) fail(ErrorKind::contract, "value(): tensor is not scalar, shape " + shape_str(shape()));
  return node_->value[0];
}

void check_finite(const Tensor& t, const char* what) {
  for (double v : t.data())
    if (!std::isfinite(v)) fail(ErrorKind::numeric, std::string(what) + " contains a non-finite value");
}

Act parse_act(const std::string& name) {
  if (name == "leaky_relu") return Act::leaky_relu;
  if (name == "elu") return Act::elu;
  if (name == "sigmoid") return Act::sigmoid;
  fail(ErrorKind::config, "unknown activation kind '" + name + "'");
}

std::string act_name(Act a) {
  switch (a) {
    case Act::leaky_relu: return "leaky_relu";
    case Act::elu: return "elu";
    case Act::sigmoid: return "sigmoid";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// EdgeSet

EdgeSet EdgeSet::build(Index num_nodes, std::vector<std::int32_t> src_in, std::vector<std::int32_t> dst_in) {
  if (src_in.size() != dst_in.size())
    fail(ErrorKind::dimension, "edge set: src/dst length mismatch");
  EdgeSet e;
  e.num_nodes = num_nodes;
  e.src = std::move(src_in);
  e.dst = std::move(dst_in);
  const Index E = e.num_edges();
  for (Index i = 0; i < E; ++i) {
    if (e.src[i] < 0 || e.src[i] >= num_nodes || e.dst[i] < 0 || e.dst[i] >= num_nodes)
      fail(ErrorKind::contract, "edge set: node id out of range");
  }
  auto group = [&](const std::vector<std::int32_t>& key, std::vector<std::int32_t>& ptr,
                   std::vector<std::int32_t>& order) {
    ptr.assign(static_cast<size_t>(num_nodes) + 1, 0);
    for (Index i = 0; i < E; ++i) ptr[static_cast<size_t>(key[i]) + 1]++;
    for (Index i = 0; i < num_nodes; ++i) ptr[static_cast<size_t>(i) + 1] += ptr[static_cast<size_t>(i)];
    order.resize(static_cast<size_t>(E));
    std::vector<std::int32_t> cur(ptr.begin(), ptr.end() - 1);
    for (Index i = 0; i < E; ++i) order[static_cast<size_t>(cur[static_cast<size_t>(key[i])]++)] = static_cast<std::int32_t>(i);
  };
  group(e.dst, e.dst_ptr, e.dst_order);
  group(e.src, e.src_ptr, e.src_order);
  return e;
}

EdgeSet EdgeSet::replicate(Index batch) const {
  const Index E = num_edges();
  std::vector<std::int32_t> rs(static_cast<size_t>(E * batch)), rd(static_cast<size_t>(E * batch));
  for (Index b = 0; b < batch; ++b) {
    const std::int32_t off = static_cast<std::int32_t>(b * num_nodes);
    for (Index i = 0; i < E; ++i) {
      rs[static_cast<size_t>(b * E + i)] = src[static_cast<size_t>(i)] + off;
      rd[static_cast<size_t>(b * E + i)] = dst[static_cast<size_t>(i)] + off;
    }
  }
  return build(num_nodes * batch, std::move(rs), std::move(rd));
}

// ---------------------------------------------------------------------------
// ops

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2)
    fail(ErrorKind::dimension, "matmul: operands must be 2-D, got " + shape_str(a.shape()) +
                                   " and " + shape_str(b.shape()));
  const Index m = a.rows(), p = a.cols(), n = b.cols();
  if (b.rows() != p)
    fail(ErrorKind::dimension, "matmul: inner dimensions differ, " + shape_str(a.shape()) +
                                   " x " + shape_str(b.shape()));
  auto out = make_node({m, n}, std::vector<double>(static_cast<size_t>(m * n)));
  kernels::matmul(m, p, n, a.data().data(), b.data().data(), out->value.data());
  auto an = a.node(), bn = b.node();
  return finish(out, "matmul", {an, bn}, [m, p, n](Node& o) {
    auto& A = *o.parents[0];
    auto& B = *o.parents[1];
    if (A.requires_grad) {
      A.ensure_grad();
      kernels::matmul_acc_grad_a(m, p, n, o.grad.data(), B.value.data(), A.grad.data());
    }
    if (B.requires_grad) {
      B.ensure_grad();
      kernels::matmul_acc_grad_b(m, p, n, A.value.data(), o.grad.data(), B.grad.data());
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const Index n = a.numel();
  auto out = make_node(a.shape(), std::vector<double>(static_cast<size_t>(n)));
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out->value.data();
#pragma omp parallel for schedule(static) if (big(n))
  for (Index i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  return finish(out, "add", {a.node(), b.node()}, [n](Node& o) {
    for (int pi = 0; pi < 2; ++pi) {
      Node& p = *o.parents[static_cast<size_t>(pi)];
      if (!p.requires_grad) continue;
      p.ensure_grad();
      double* g = p.grad.data();
      const double* og = o.grad.data();
#pragma omp parallel for schedule(static) if (big(n))
      for (Index i = 0; i < n; ++i) g[i] += og[i];
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (x.shape().size() != 2 || bias.shape().size() != 1 || bias.shape()[0] != x.cols())
    fail(ErrorKind::dimension, "add_bias: " + shape_str(x.shape()) + " + " + shape_str(bias.shape()));
  const Index m = x.rows(), n = x.cols();
  auto out = make_node(x.shape(), std::vector<double>(static_cast<size_t>(m * n)));
  const double* px = x.data().data();
  const double* pb = bias.data().data();
  double* po = out->value.data();
#pragma omp parallel for schedule(static) if (big(m * n))
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j) po[i * n + j] = px[i * n + j] + pb[j];
  return finish(out, "add_bias", {x.node(), bias.node()}, [m, n](Node& o) {
    Node& X = *o.parents[0];
    Node& B = *o.parents[1];
    if (X.requires_grad) {
      X.ensure_grad();
      double* g = X.grad.data();
      const double* og = o.grad.data();
      const Index total = m * n;
#pragma omp parallel for schedule(static) if (big(total))
      for (Index i = 0; i < total; ++i) g[i] += og[i];
    }
    if (B.requires_grad) {
      B.ensure_grad();
      const double* og = o.grad.data();
#pragma omp parallel for schedule(static) if (big(m * n))
      for (Index j = 0; j < n; ++j) {
        double acc = 0.0;
        for (Index i = 0; i < m; ++i) acc += og[i * n + j];
        B.grad[static_cast<size_t>(j)] += acc;
      }
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const Index n = a.numel();
  auto out = make_node(a.shape(), std::vector<double>(static_cast<size_t>(n)));
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out->value.data();
#pragma omp parallel for schedule(static) if (big(n))
  for (Index i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  return finish(out, "mul", {a.node(), b.node()}, [n](Node& o) {
    Node& A = *o.parents[0];
    Node& B = *o.parents[1];
    const double* og = o.grad.data();
    if (A.requires_grad) {
      A.ensure_grad();
      const double* vb = B.value.data();
      double* g = A.grad.data();
#pragma omp parallel for schedule(static) if (big(n))
      for (Index i = 0; i < n; ++i) g[i] += og[i] * vb[i];
    }
    if (B.requires_grad) {
      B.ensure_grad();
      const double* va = A.value.data();
      double* g = B.grad.data();
#pragma omp parallel for schedule(static) if (big(n))
      for (Index i = 0; i < n; ++i) g[i] += og[i] * va[i];
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  const Index n = a.numel();
  auto out = make_node(a.shape(), std::vector<double>(static_cast<size_t>(n)));
  const double* pa = a.data().data();
  double* po = out->value.data();
#pragma omp parallel for schedule(static) if (big(n))
  for (Index i = 0; i < n; ++i) po[i] = c * pa[i];
  return finish(out, "scale", {a.node()}, [n, c](Node& o) {
    Node& A = *o.parents[0];
    if (!A.requires_grad) return;
    A.ensure_grad();
    const double* og = o.grad.data();
    double* g = A.grad.data();
#pragma omp parallel for schedule(static) if (big(n))
    for (Index i = 0; i < n; ++i) g[i] += c * og[i];
  });
}

Tensor sum(const Tensor& a) {
  const Index n = a.numel();
  double acc = 0.0;
  const double* pa = a.data().data();
  for (Index i = 0; i < n; ++i) acc += pa[i];
  auto out = make_node({1}, {acc});
  return finish(out, "sum", {a.node()}, [n](Node& o) {
    Node& A = *o.parents[0];
    if (!A.requires_grad) return;
    A.ensure_grad();
    const double g = o.grad[0];
    double* pg = A.grad.data();
#pragma omp parallel for schedule(static) if (big(n))
    for (Index i = 0; i < n; ++i) pg[i] += g;
  });
}

Tensor activation(const Tensor& x, Act kind, double leaky_slope) {
  const Index n = x.numel();
  auto out = make_node(x.shape(), std::vector<double>(static_cast<size_t>(n)));
  const double* px = x.data().data();
  double* po = out->value.data();
  switch (kind) {
    case Act::leaky_relu:
#pragma omp parallel for schedule(static) if (big(n))
      for (Index i = 0; i < n; ++i) po[i] = px[i] >= 0.0 ? px[i] : leaky_slope * px[i];
      break;
    case Act::elu:
#pragma omp parallel for schedule(static) if (big(n))
      for (Index i = 0; i < n; ++i) po[i] = px[i] >= 0.0 ? px[i] : std::expm1(px[i]);
      break;
    case Act::sigmoid:
#pragma omp parallel for schedule(static) if (big(n))
      for (Index i = 0; i < n; ++i) po[i] = 1.0 / (1.0 + std::exp(-px[i]));
      break;
  }
  return finish(out, "activation", {x.node()}, [n, kind, leaky_slope](Node& o) {
    Node& X = *o.parents[0];
    if (!X.requires_grad) return;
    X.ensure_grad();
    const double* px = X.value.data();
    const double* pv = o.value.data();  // elu/sigmoid derivatives reuse the output
    const double* og = o.grad.data();
    double* g = X.grad.data();
    switch (kind) {
      case Act::leaky_relu:
#pragma omp parallel for schedule(static) if (big(n))
        for (Index i = 0; i < n; ++i) g[i] += og[i] * (px[i] > 0.0 ? 1.0 : leaky_slope);
        break;
      case Act::elu:
#pragma omp parallel for schedule(static) if (big(n))
        for (Index i = 0; i < n; ++i) g[i] += og[i] * (px[i] > 0.0 ? 1.0 : pv[i] + 1.0);
        break;
      case Act::sigmoid:
#pragma omp parallel for schedule(static) if (big(n))
        for (Index i = 0; i < n; ++i) g[i] += og[i] * pv[i] * (1.0 - pv[i]);
        break;
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) fail(ErrorKind::contract, "concat_cols: no inputs");
  const Index m = parts[0].rows();
  Index total = 0;
  for (const auto& p : parts) {
    if (p.shape().size() != 2 || p.rows() != m)
      fail(ErrorKind::dimension, "concat_cols: row counts differ");
    total += p.cols();
  }
  auto out = make_node({m, total}, std::vector<double>(static_cast<size_t>(m * total)));
  std::vector<Index> offsets;
  Index off = 0;
  std::vector<std::shared_ptr<Node>> parents;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const Index c = p.cols();
    const double* src = p.data().data();
    double* dstp = out->value.data();
    for (Index i = 0; i < m; ++i)
      std::memcpy(dstp + i * total + off, src + i * c, sizeof(double) * static_cast<size_t>(c));
    off += c;
    parents.push_back(p.node());
  }
  return finish(out, "concat_cols", std::move(parents), [m, total, offsets](Node& o) {
    for (size_t pi = 0; pi < o.parents.size(); ++pi) {
      Node& P = *o.parents[pi];
      if (!P.requires_grad) continue;
      P.ensure_grad();
      const Index c = P.shape[1];
      const Index off = offsets[pi];
      const double* og = o.grad.data();
      double* g = P.grad.data();
      for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < c; ++j) g[i * c + j] += og[i * total + off + j];
    }
  });
}

Tensor select_rows(const Tensor& x, std::vector<std::int32_t> row_ids) {
  if (x.shape().size() != 2) fail(ErrorKind::dimension, "select_rows: input must be 2-D");
  const Index n = x.rows(), d = x.cols();
  for (auto r : row_ids)
    if (r < 0 || r >= n) fail(ErrorKind::contract, "select_rows: row id " + std::to_string(r) + " out of range");
  const Index m = static_cast<Index>(row_ids.size());
  auto out = make_node({m, d}, std::vector<double>(static_cast<size_t>(m * d)));
  const double* px = x.data().data();
  double* po = out->value.data();
  for (Index i = 0; i < m; ++i)
    std::memcpy(po + i * d, px + static_cast<Index>(row_ids[static_cast<size_t>(i)]) * d,
                sizeof(double) * static_cast<size_t>(d));
  auto ids = std::make_shared<std::vector<std::int32_t>>(std::move(row_ids));
  return finish(out, "select_rows", {x.node()}, [m, d, ids](Node& o) {
    Node& X = *o.parents[0];
    if (!X.requires_grad) return;
    X.ensure_grad();
    const double* og = o.grad.data();
    double* g = X.grad.data();
    for (Index i = 0; i < m; ++i) {
      double* row = g + static_cast<Index>((*ids)[static_cast<size_t>(i)]) * d;
      const double* orow = og + i * d;
      for (Index j = 0; j < d; ++j) row[j] += orow[j];
    }
  });
}

Tensor tile_cols(const Tensor& x, Index reps) {
  if (x.shape().size() != 2) fail(ErrorKind::dimension, "tile_cols: input must be 2-D");
  if (reps < 1) fail(ErrorKind::config, "tile_cols: reps must be positive");
  const Index m = x.rows(), c = x.cols();
  auto out = make_node({m, reps * c}, std::vector<double>(static_cast<size_t>(m * reps * c)));
  const double* px = x.data().data();
  double* po = out->value.data();
  for (Index i = 0; i < m; ++i)
    for (Index r = 0; r < reps; ++r)
      std::memcpy(po + (i * reps + r) * c, px + i * c, sizeof(double) * static_cast<size_t>(c));
  return finish(out, "tile_cols", {x.node()}, [m, c, reps](Node& o) {
    Node& X = *o.parents[0];
    if (!X.requires_grad) return;
    X.ensure_grad();
    const double* og = o.grad.data();
    double* g = X.grad.data();
    for (Index i = 0; i < m; ++i)
      for (Index r = 0; r < reps; ++r)
        for (Index j = 0; j < c; ++j) g[i * c + j] += og[(i * reps + r) * c + j];
  });
}

Tensor select_col_groups(const Tensor& x, std::vector<std::int32_t> group_ids, Index group) {
  if (x.shape().size() != 2) fail(ErrorKind::dimension, "select_col_groups: input must be 2-D");
  const Index m = x.rows(), n = x.cols();
  if (group < 1 || n % group != 0) fail(ErrorKind::dimension, "select_col_groups: group size does not divide columns");
  if (static_cast<Index>(group_ids.size()) != m)
    fail(ErrorKind::dimension, "select_col_groups: one group id per row required");
  const Index ngroups = n / group;
  for (auto gid : group_ids)
    if (gid < 0 || gid >= ngroups) fail(ErrorKind::contract, "select_col_groups: group id out of range");
  auto out = make_node({m, group}, std::vector<double>(static_cast<size_t>(m * group)));
  const double* px = x.data().data();
  double* po = out->value.data();
  for (Index i = 0; i < m; ++i)
    std::memcpy(po + i * group, px + i * n + static_cast<Index>(group_ids[static_cast<size_t>(i)]) * group,
                sizeof(double) * static_cast<size_t>(group));
  auto ids = std::make_shared<std::vector<std::int32_t>>(std::move(group_ids));
  return finish(out, "select_col_groups", {x.node()}, [m, n, group, ids](Node& o) {
    Node& X = *o.parents[0];
    if (!X.requires_grad) return;
    X.ensure_grad();
    const double* og = o.grad.data();
    double* g = X.grad.data();
    for (Index i = 0; i < m; ++i) {
      double* row = g + i * n + static_cast<Index>((*ids)[static_cast<size_t>(i)]) * group;
      for (Index j = 0; j < group; ++j) row[j] += og[i * group + j];
    }
  });
}

Tensor edge_score(const Tensor& Wh, const std::shared_ptr<const EdgeSet>& edges, const Tensor& a) {
  if (Wh.shape().size() != 2) fail(ErrorKind::dimension, "edge_score: Wh must be 2-D");
  const Index d = Wh.cols();
  if (a.numel() != 2 * d)
    fail(ErrorKind::dimension, "edge_score: attention vector length " + std::to_string(a.numel()) +
                                   " != 2*" + std::to_string(d));
  if (Wh.rows() != edges->num_nodes) fail(ErrorKind::dimension, "edge_score: node count mismatch");
  const Index E = edges->num_edges();
  auto out = make_node({E}, std::vector<double>(static_cast<size_t>(E)));
  const double* wh = Wh.data().data();
  const double* pa = a.data().data();
  double* po = out->value.data();
#pragma omp parallel for schedule(static) if (big(E * d))
  for (Index e = 0; e < E; ++e) {
    const double* hd = wh + static_cast<Index>(edges->dst[static_cast<size_t>(e)]) * d;
    const double* hs = wh + static_cast<Index>(edges->src[static_cast<size_t>(e)]) * d;
    double acc = 0.0;
    for (Index f = 0; f < d; ++f) acc += pa[f] * hd[f] + pa[d + f] * hs[f];
    po[e] = acc;
  }
  return finish(out, "edge_score", {Wh.node(), a.node()}, [d, E, edges](Node& o) {
    Node& W = *o.parents[0];
    Node& A = *o.parents[1];
    const double* og = o.grad.data();
    const double* pa = A.value.data();
    const double* wh = W.value.data();
    if (W.requires_grad) {
      W.ensure_grad();
      double* g = W.grad.data();
      const Index N = edges->num_nodes;
      // per-node accumulation in CSR order keeps the scatter deterministic
#pragma omp parallel for schedule(static) if (big(E * d))
      for (Index i = 0; i < N; ++i) {
        double* gi = g + i * d;
        for (std::int32_t t = edges->dst_ptr[static_cast<size_t>(i)]; t < edges->dst_ptr[static_cast<size_t>(i) + 1]; ++t) {
          const double ge = og[edges->dst_order[static_cast<size_t>(t)]];
          for (Index f = 0; f < d; ++f) gi[f] += pa[f] * ge;
        }
        for (std::int32_t t = edges->src_ptr[static_cast<size_t>(i)]; t < edges->src_ptr[static_cast<size_t>(i) + 1]; ++t) {
          const double ge = og[edges->src_order[static_cast<size_t>(t)]];
          for (Index f = 0; f < d; ++f) gi[f] += pa[d + f] * ge;
        }
      }
    }
    if (A.requires_grad) {
      A.ensure_grad();
      double* ga = A.grad.data();
#pragma omp parallel for schedule(static) if (big(E * d))
      for (Index f = 0; f < d; ++f) {
        double acc_d = 0.0, acc_s = 0.0;
        for (Index e = 0; e < E; ++e) {
          acc_d += wh[static_cast<Index>(edges->dst[static_cast<size_t>(e)]) * d + f] * og[e];
          acc_s += wh[static_cast<Index>(edges->src[static_cast<size_t>(e)]) * d + f] * og[e];
        }
        ga[f] += acc_d;
        ga[d + f] += acc_s;
      }
    }
  });
}

Tensor segment_softmax(const Tensor& scores, std::vector<std::int32_t> segment_of, Index num_segments) {
  if (scores.shape().size() != 1) fail(ErrorKind::dimension, "segment_softmax: scores must be 1-D");
  const Index E = scores.numel();
  if (static_cast<Index>(segment_of.size()) != E)
    fail(ErrorKind::dimension, "segment_softmax: segment list length mismatch");
  for (auto s : segment_of)
    if (s < 0 || s >= num_segments) fail(ErrorKind::contract, "segment_softmax: segment id out of range");

  // group edges by segment
  std::vector<std::int32_t> ptr(static_cast<size_t>(num_segments) + 1, 0), order(static_cast<size_t>(E));
  for (Index i = 0; i < E; ++i) ptr[static_cast<size_t>(segment_of[static_cast<size_t>(i)]) + 1]++;
  for (Index i = 0; i < num_segments; ++i) ptr[static_cast<size_t>(i) + 1] += ptr[static_cast<size_t>(i)];
  {
    std::vector<std::int32_t> cur(ptr.begin(), ptr.end() - 1);
    for (Index i = 0; i < E; ++i)
      order[static_cast<size_t>(cur[static_cast<size_t>(segment_of[static_cast<size_t>(i)])]++)] = static_cast<std::int32_t>(i);
  }

  auto out = make_node({E}, std::vector<double>(static_cast<size_t>(E)));
  const double* ps = scores.data().data();
  double* po = out->value.data();
  auto pptr = std::make_shared<std::vector<std::int32_t>>(std::move(ptr));
  auto porder = std::make_shared<std::vector<std::int32_t>>(std::move(order));
#pragma omp parallel for schedule(static) if (big(E * 8))
  for (Index s = 0; s < num_segments; ++s) {
    const std::int32_t lo = (*pptr)[static_cast<size_t>(s)], hi = (*pptr)[static_cast<size_t>(s) + 1];
    if (lo == hi) continue;
    double mx = -1e300;
    for (std::int32_t t = lo; t < hi; ++t) mx = std::max(mx, ps[(*porder)[static_cast<size_t>(t)]]);
    double z = 0.0;
    for (std::int32_t t = lo; t < hi; ++t) {
      const Index e = (*porder)[static_cast<size_t>(t)];
      po[e] = std::exp(ps[e] - mx);
      z += po[e];
    }
    for (std::int32_t t = lo; t < hi; ++t) po[(*porder)[static_cast<size_t>(t)]] /= z;
  }
  return finish(out, "segment_softmax", {scores.node()}, [num_segments, pptr, porder](Node& o) {
    Node& S = *o.parents[0];
    if (!S.requires_grad) return;
    S.ensure_grad();
    const double* alpha = o.value.data();
    const double* og = o.grad.data();
    double* g = S.grad.data();
#pragma omp parallel for schedule(static) if (big(static_cast<Index>(o.value.size()) * 8))
    for (Index s = 0; s < num_segments; ++s) {
      const std::int32_t lo = (*pptr)[static_cast<size_t>(s)], hi = (*pptr)[static_cast<size_t>(s) + 1];
      double dot = 0.0;
      for (std::int32_t t = lo; t < hi; ++t) {
        const Index e = (*porder)[static_cast<size_t>(t)];
        dot += og[e] * alpha[e];
      }
      for (std::int32_t t = lo; t < hi; ++t) {
        const Index e = (*porder)[static_cast<size_t>(t)];
        g[e] += alpha[e] * (og[e] - dot);
      }
    }
  });
}

Tensor scatter_weighted_rows(const Tensor& alpha, const Tensor& Wh,
                             const std::shared_ptr<const EdgeSet>& edges) {
  if (alpha.shape().size() != 1 || alpha.numel() != edges->num_edges())
    fail(ErrorKind::dimension, "scatter_weighted_rows: one weight per edge required");
  if (Wh.rows() != edges->num_nodes) fail(ErrorKind::dimension, "scatter_weighted_rows: node count mismatch");
  const Index d = Wh.cols();
  const Index N = edges->num_nodes;
  auto out = make_node({N, d}, std::vector<double>(static_cast<size_t>(N * d), 0.0));
  const double* pal = alpha.data().data();
  const double* wh = Wh.data().data();
  double* po = out->value.data();
#pragma omp parallel for schedule(static) if (big(edges->num_edges() * d))
  for (Index i = 0; i < N; ++i) {
    double* oi = po + i * d;
    for (std::int32_t t = edges->dst_ptr[static_cast<size_t>(i)]; t < edges->dst_ptr[static_cast<size_t>(i) + 1]; ++t) {
      const Index e = edges->dst_order[static_cast<size_t>(t)];
      const double w = pal[e];
      const double* hs = wh + static_cast<Index>(edges->src[static_cast<size_t>(e)]) * d;
      for (Index f = 0; f < d; ++f) oi[f] += w * hs[f];
    }
  }
  return finish(out, "scatter_weighted_rows", {alpha.node(), Wh.node()}, [d, edges](Node& o) {
    Node& A = *o.parents[0];
    Node& W = *o.parents[1];
    const double* og = o.grad.data();
    const Index E = edges->num_edges();
    if (A.requires_grad) {
      A.ensure_grad();
      const double* wh = W.value.data();
      double* ga = A.grad.data();
#pragma omp parallel for schedule(static) if (big(E * d))
      for (Index e = 0; e < E; ++e) {
        const double* orow = og + static_cast<Index>(edges->dst[static_cast<size_t>(e)]) * d;
        const double* hs = wh + static_cast<Index>(edges->src[static_cast<size_t>(e)]) * d;
        double acc = 0.0;
        for (Index f = 0; f < d; ++f) acc += orow[f] * hs[f];
        ga[e] += acc;
      }
    }
    if (W.requires_grad) {
      W.ensure_grad();
      const double* pal = A.value.data();
      double* gw = W.grad.data();
      const Index N = edges->num_nodes;
#pragma omp parallel for schedule(static) if (big(E * d))
      for (Index i = 0; i < N; ++i) {
        double* gi = gw + i * d;
        for (std::int32_t t = edges->src_ptr[static_cast<size_t>(i)]; t < edges->src_ptr[static_cast<size_t>(i) + 1]; ++t) {
          const Index e = edges->src_order[static_cast<size_t>(t)];
          const double w = pal[e];
          const double* orow = og + static_cast<Index>(edges->dst[static_cast<size_t>(e)]) * d;
          for (Index f = 0; f < d; ++f) gi[f] += w * orow[f];
        }
      }
    }
  });
}

Tensor block_matmul(const std::shared_ptr<const std::vector<double>>& M, Index n, const Tensor& h) {
  if (h.shape().size() != 2) fail(ErrorKind::dimension, "block_matmul: input must be 2-D");
  if (static_cast<Index>(M->size()) != n * n) fail(ErrorKind::dimension, "block_matmul: matrix is not n x n");
  if (h.rows() % n != 0) fail(ErrorKind::dimension, "block_matmul: rows not a multiple of block size");
  const Index batch = h.rows() / n, d = h.cols();
  auto out = make_node(h.shape(), std::vector<double>(static_cast<size_t>(h.numel())));
  kernels::block_matmul(batch, n, d, M->data(), h.data().data(), out->value.data());
  return finish(out, "block_matmul", {h.node()}, [M, n, batch, d](Node& o) {
    Node& H = *o.parents[0];
    if (!H.requires_grad) return;
    H.ensure_grad();
    // dH = M^T applied per block
    std::vector<double> mt(static_cast<size_t>(n * n));
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) mt[static_cast<size_t>(j * n + i)] = (*M)[static_cast<size_t>(i * n + j)];
    std::vector<double> tmp(o.grad.size());
    kernels::block_matmul(batch, n, d, mt.data(), o.grad.data(), tmp.data());
    double* g = H.grad.data();
    const Index total = static_cast<Index>(tmp.size());
#pragma omp parallel for schedule(static) if (big(total))
    for (Index i = 0; i < total; ++i) g[i] += tmp[i];
  });
}

Tensor dropout(const Tensor& x, double p, bool training, StreamRng* rng) {
  if (p < 0.0 || p >= 1.0) fail(ErrorKind::config, "dropout: p must be in [0, 1)");
  if (!training || p == 0.0) return x;
  if (rng == nullptr) fail(ErrorKind::contract, "dropout: rng required in training mode");
  g_stochastic_hit = true;
  const Index n = x.numel();
  const double keep = 1.0 - p;
  auto mask = std::make_shared<std::vector<double>>(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i) (*mask)[static_cast<size_t>(i)] = rng->uniform() < keep ? 1.0 / keep : 0.0;
  auto out = make_node(x.shape(), std::vector<double>(static_cast<size_t>(n)));
  const double* px = x.data().data();
  double* po = out->value.data();
  for (Index i = 0; i < n; ++i) po[i] = px[i] * (*mask)[static_cast<size_t>(i)];
  return finish(out, "dropout", {x.node()}, [n, mask](Node& o) {
    Node& X = *o.parents[0];
    if (!X.requires_grad) return;
    X.ensure_grad();
    const double* og = o.grad.data();
    double* g = X.grad.data();
    for (Index i = 0; i < n; ++i) g[i] += og[i] * (*mask)[static_cast<size_t>(i)];
  });
}

double bce_scalar(double logit, double label) {
  return std::max(logit, 0.0) - logit * label + std::log1p(std::exp(-std::abs(logit)));
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& labels, const Tensor& mask) {
  require_same_shape(logits, labels, "bce_with_logits");
  require_same_shape(logits, mask, "bce_with_logits");
  const Index n = logits.numel();
  const double* pl = logits.data().data();
  const double* pz = labels.data().data();
  const double* pm = mask.data().data();
  double acc = 0.0;
  Index count = 0;
  for (Index i = 0; i < n; ++i) {
    if (pm[i] == 0.0) continue;
    acc += pm[i] * bce_scalar(pl[i], pz[i]);
    ++count;
  }
  if (count == 0) fail(ErrorKind::degenerate, "bce_with_logits: mask selects no cells");
  auto out = make_node({1}, {acc / static_cast<double>(count)});
  const double inv = 1.0 / static_cast<double>(count);
  return finish(out, "bce_with_logits", {logits.node(), labels.node(), mask.node()}, [n, inv](Node& o) {
    Node& L = *o.parents[0];
    if (!L.requires_grad) return;
    L.ensure_grad();
    const double g = o.grad[0] * inv;
    const double* pl = L.value.data();
    const double* pz = o.parents[1]->value.data();
    const double* pm = o.parents[2]->value.data();
    double* gl = L.grad.data();
#pragma omp parallel for schedule(static) if (big(n))
    for (Index i = 0; i < n; ++i) {
      if (pm[i] == 0.0) continue;
      const double sig = 1.0 / (1.0 + std::exp(-pl[i]));
      gl[i] += g * pm[i] * (sig - pz[i]);
    }
  });
}

Tensor softmax_xent(const Tensor& logits, std::vector<std::int32_t> targets) {
  if (logits.shape().size() != 2) fail(ErrorKind::dimension, "softmax_xent: logits must be 2-D");
  const Index N = logits.rows(), C = logits.cols();
  if (static_cast<Index>(targets.size()) != N)
    fail(ErrorKind::dimension, "softmax_xent: one target per row required");
  if (N == 0) fail(ErrorKind::degenerate, "softmax_xent: empty batch");
  for (auto t : targets)
    if (t < 0 || t >= C) fail(ErrorKind::contract, "softmax_xent: target out of range");
  const double* pl = logits.data().data();
  double acc = 0.0;
  for (Index i = 0; i < N; ++i) {
    const double* row = pl + i * C;
    double mx = row[0];
    for (Index c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    double z = 0.0;
    for (Index c = 0; c < C; ++c) z += std::exp(row[c] - mx);
    acc += mx + std::log(z) - row[targets[static_cast<size_t>(i)]];
  }
  auto out = make_node({1}, {acc / static_cast<double>(N)});
  auto tgt = std::make_shared<std::vector<std::int32_t>>(std::move(targets));
  return finish(out, "softmax_xent", {logits.node()}, [N, C, tgt](Node& o) {
    Node& L = *o.parents[0];
    if (!L.requires_grad) return;
    L.ensure_grad();
    const double g = o.grad[0] / static_cast<double>(N);
    const double* pl = L.value.data();
    double* gl = L.grad.data();
#pragma omp parallel for schedule(static) if (big(N * C))
    for (Index i = 0; i < N; ++i) {
      const double* row = pl + i * C;
      double* grow = gl + i * C;
      double mx = row[0];
      for (Index c = 1; c < C; ++c) mx = std::max(mx, row[c]);
      double z = 0.0;
      for (Index c = 0; c < C; ++c) z += std::exp(row[c] - mx);
      for (Index c = 0; c < C; ++c) {
        const double soft = std::exp(row[c] - mx) / z;
        grow[c] += g * (soft - (c == (*tgt)[static_cast<size_t>(i)] ? 1.0 : 0.0));
      }
    }
  });
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    fail(ErrorKind::contract, "backward: loss must be a scalar tensor");
  Node* root = loss.node().get();
  if (!root->requires_grad) return;

  // iterative post-order DFS over grad-requiring parents
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx].get();
      ++idx;
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward) n->backward(*n);
  }
}

void reset_stochastic_trace() { g_stochastic_hit = false; }
bool stochastic_trace_hit() { return g_stochastic_hit; }

}  // namespace chexrel::nd
