#include "chexrel/gatnet.hpp"

namespace chexrel::gat {

GatLayerParams make_gat_layer_params(nd::ParamStore& store, const std::string& prefix, Index in_dim,
                                     Index out_dim, int heads, StreamRng& init_rng) {
  if (heads < 1 || in_dim < 1 || out_dim < 1)
    fail(ErrorKind::config, "gat layer: dims and head count must be positive");
  GatLayerParams p;
  p.heads = heads;
  p.in_dim = in_dim;
  p.out_dim = out_dim;
  for (int h = 0; h < heads; ++h) {
    const std::string hp = prefix + ".head" + std::to_string(h);
    p.W.push_back(store.declare_glorot(hp + ".W", in_dim, out_dim, init_rng));
    p.a.push_back(store.declare_zeros(hp + ".a", {2 * out_dim}));
  }
  return p;
}

GcnLayerParams make_gcn_layer_params(nd::ParamStore& store, const std::string& prefix, Index in_dim,
                                     Index out_dim, StreamRng& init_rng) {
  GcnLayerParams p;
  p.in_dim = in_dim;
  p.out_dim = out_dim;
  p.W = store.declare_glorot(prefix + ".W", in_dim, out_dim, init_rng);
  return p;
}

std::shared_ptr<const nd::EdgeSet> with_self_loops(const nd::EdgeSet& edges) {
  std::vector<std::int32_t> src = edges.src, dst = edges.dst;
  for (Index i = 0; i < edges.num_nodes; ++i) {
    src.push_back(static_cast<std::int32_t>(i));
    dst.push_back(static_cast<std::int32_t>(i));
  }
  return std::make_shared<const nd::EdgeSet>(
      nd::EdgeSet::build(edges.num_nodes, std::move(src), std::move(dst)));
}

Tensor gat_layer(const Tensor& H, const std::shared_ptr<const nd::EdgeSet>& edges,
                 const GatLayerParams& params, const LayerOptions& opt) {
  if (H.cols() != params.in_dim)
    fail(ErrorKind::dimension, "gat_layer: input width " + std::to_string(H.cols()) +
                                   " != layer in_dim " + std::to_string(params.in_dim));
  if (H.rows() != edges->num_nodes)
    fail(ErrorKind::dimension, "gat_layer: node count mismatch with edge set");
  std::vector<std::int32_t> seg(edges->dst.begin(), edges->dst.end());

  Tensor combined;
  std::vector<Tensor> head_outputs;
  for (int h = 0; h < params.heads; ++h) {
    Tensor Wh = nd::matmul(H, params.W[static_cast<size_t>(h)]);
    Tensor scores = nd::edge_score(Wh, edges, params.a[static_cast<size_t>(h)]);
    scores = nd::activation(scores, nd::Act::leaky_relu, opt.leaky_slope);
    Tensor alpha = nd::segment_softmax(scores, seg, edges->num_nodes);
    alpha = nd::dropout(alpha, opt.dropout_p, opt.training, opt.rng);
    Tensor out = nd::scatter_weighted_rows(alpha, Wh, edges);
    if (opt.concat_heads) {
      head_outputs.push_back(out);
    } else {
      combined = combined.defined() ? nd::add(combined, out) : out;
    }
  }
  if (opt.concat_heads) {
    combined = nd::concat_cols(head_outputs);
  } else if (params.heads > 1) {
    combined = nd::scale(combined, 1.0 / static_cast<double>(params.heads));
  }
  return nd::activation(combined, opt.phi);
}

Tensor gcn_layer(const Tensor& H, const std::shared_ptr<const std::vector<double>>& norm, Index n,
                 const GcnLayerParams& params, nd::Act phi) {
  if (H.cols() != params.in_dim)
    fail(ErrorKind::dimension, "gcn_layer: input width " + std::to_string(H.cols()) +
                                   " != layer in_dim " + std::to_string(params.in_dim));
  Tensor hw = nd::matmul(H, params.W);
  Tensor mixed = nd::block_matmul(norm, n, hw);
  return nd::activation(mixed, phi);
}

Tensor extract_focus(const Tensor& h_out, int k_star, int k) {
  if (k_star < 0 || k_star >= k)
    fail(ErrorKind::contract, "extract_focus: focus index " + std::to_string(k_star) +
                                  " outside [0," + std::to_string(k) + ")");
  if (h_out.rows() != 2 * k) fail(ErrorKind::dimension, "extract_focus: expected 2k rows");
  return nd::select_rows(h_out, {static_cast<std::int32_t>(k + k_star)});
}

Tensor extract_focus_batch(const Tensor& h_out, const std::vector<int>& focus, int k) {
  const Index n = 2 * static_cast<Index>(k);
  if (h_out.rows() != n * static_cast<Index>(focus.size()))
    fail(ErrorKind::dimension, "extract_focus_batch: row count mismatch");
  std::vector<std::int32_t> rows;
  rows.reserve(focus.size());
  for (size_t b = 0; b < focus.size(); ++b) {
    if (focus[b] < 0 || focus[b] >= k)
      fail(ErrorKind::contract, "extract_focus_batch: focus index out of range");
    rows.push_back(static_cast<std::int32_t>(static_cast<Index>(b) * n + k + focus[b]));
  }
  return nd::select_rows(h_out, std::move(rows));
}

}  // namespace chexrel::gat
