#pragma once

#include <memory>
#include <string>
#include <vector>

#include "chexrel/graphbuild.hpp"
#include "chexrel/params.hpp"
#include "chexrel/tensor.hpp"

namespace chexrel::gat {

using nd::Index;
using nd::Tensor;

// Per-head weight matrix and attention vector for one attention layer.
struct GatLayerParams {
  int heads = 1;
  Index in_dim = 0, out_dim = 0;
  std::vector<Tensor> W;  // heads copies of in_dim x out_dim
  std::vector<Tensor> a;  // heads copies of length 2*out_dim
};

GatLayerParams make_gat_layer_params(nd::ParamStore& store, const std::string& prefix, Index in_dim,
                                     Index out_dim, int heads, StreamRng& init_rng);

struct GcnLayerParams {
  Index in_dim = 0, out_dim = 0;
  Tensor W;
};

GcnLayerParams make_gcn_layer_params(nd::ParamStore& store, const std::string& prefix, Index in_dim,
                                     Index out_dim, StreamRng& init_rng);

struct LayerOptions {
  double dropout_p = 0.0;
  bool training = false;
  StreamRng* rng = nullptr;
  nd::Act phi = nd::Act::elu;
  double leaky_slope = 0.2;
  bool concat_heads = false;  // default: average head outputs
};

// One attention layer over a batched node matrix H[(batch*n) x d_in].
// `edges` must already be replicated for the batch and must NOT contain
// self-loops; the layer adds the self edge of every node to the softmax
// support itself. Scores are LeakyReLU(a^T [W h_i ; W h_j]) for each edge
// j -> i, normalized per destination, and the head output is
// phi(sum_j alpha_ij W h_j). Heads are averaged unless concat_heads is set,
// in which case each head must produce out_dim / heads columns.
Tensor gat_layer(const Tensor& H, const std::shared_ptr<const nd::EdgeSet>& edges_with_self,
                 const GatLayerParams& params, const LayerOptions& opt);

// Convenience for building the softmax support: appends one self edge per
// node to a replicated edge set.
std::shared_ptr<const nd::EdgeSet> with_self_loops(const nd::EdgeSet& edges);

// Graph convolution with symmetric degree normalization (the attention-free
// variant): phi(D^-1/2 (sym(A)+I) D^-1/2 H W), applied per block of the batch.
Tensor gcn_layer(const Tensor& H, const std::shared_ptr<const std::vector<double>>& norm, Index n,
                 const GcnLayerParams& params, nd::Act phi = nd::Act::elu);

// Row (k + k_star) of a single pair graph output: the focus region of the
// current exam.
Tensor extract_focus(const Tensor& h_out, int k_star, int k);
// Batched variant: row b*(2k) + k + focus[b] for every sample.
Tensor extract_focus_batch(const Tensor& h_out, const std::vector<int>& focus, int k);

// A single exam-pair graph: node features, adjacency, and the focus index.
struct PairGraph {
  Tensor H;  // 2k x d, rows [0,k) = prior exam, rows [k,2k) = current exam
  graph::PairAdjacency adjacency;
  int focus = 0;  // k* in [0, k)
};

}  // namespace chexrel::gat
