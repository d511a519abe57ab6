#include "chexrel/models.hpp"

#include <algorithm>

namespace chexrel::model {

ModelKind parse_model_kind(const std::string& s) {
  if (s == "chexrelnet") return ModelKind::chexrelnet;
  if (s == "local") return ModelKind::local;
  if (s == "global") return ModelKind::global;
  fail(ErrorKind::config, "unknown model '" + s + "' (expected chexrelnet|local|global)");
}

std::string model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::chexrelnet: return "chexrelnet";
    case ModelKind::local: return "local";
    case ModelKind::global: return "global";
  }
  return "?";
}

AblationType parse_ablation(const std::string& s) {
  if (s == "A") return AblationType::A;
  if (s == "B") return AblationType::B;
  if (s == "C") return AblationType::C;
  if (s == "D") return AblationType::D;
  fail(ErrorKind::config, "unknown ablation type '" + s + "' (expected A|B|C|D)");
}

std::string ablation_name(AblationType t) {
  switch (t) {
    case AblationType::A: return "A";
    case AblationType::B: return "B";
    case AblationType::C: return "C";
    case AblationType::D: return "D";
  }
  return "?";
}

ClassMode parse_class_mode(const std::string& s) {
  if (s == "two_class") return ClassMode::two_class;
  if (s == "three_class") return ClassMode::three_class;
  fail(ErrorKind::config, "unknown class mode '" + s + "'");
}

std::string class_mode_name(ClassMode m) {
  return m == ClassMode::three_class ? "three_class" : "two_class";
}

Batch make_batch(const std::vector<ComparisonSample>& samples, const std::vector<std::int32_t>& ids,
                 int k, Index d) {
  if (ids.empty()) fail(ErrorKind::degenerate, "make_batch: empty batch");
  Batch b;
  b.B = static_cast<int>(ids.size());
  const Index n2k = 2 * static_cast<Index>(k);
  std::vector<double> h0(static_cast<size_t>(b.B * n2k * d));
  std::vector<double> q(static_cast<size_t>(b.B) * static_cast<size_t>(d));
  std::vector<double> qp(static_cast<size_t>(b.B) * static_cast<size_t>(d));
  for (int i = 0; i < b.B; ++i) {
    const auto& s = samples.at(static_cast<size_t>(ids[static_cast<size_t>(i)]));
    const size_t kd = static_cast<size_t>(k) * static_cast<size_t>(d);
    if (s.R.size() != kd || s.Rp.size() != kd || s.Q.size() != static_cast<size_t>(d) ||
        s.Qp.size() != static_cast<size_t>(d))
      fail(ErrorKind::dimension, "make_batch: sample feature sizes do not match (k,d)");
    if (s.focus >= k) fail(ErrorKind::contract, "make_batch: focus region out of range");
    double* base = h0.data() + static_cast<size_t>(i) * static_cast<size_t>(n2k * d);
    for (size_t j = 0; j < kd; ++j) base[j] = static_cast<double>(s.R[j]);
    for (size_t j = 0; j < kd; ++j) base[kd + j] = static_cast<double>(s.Rp[j]);
    for (Index j = 0; j < d; ++j) {
      q[static_cast<size_t>(i * d + j)] = static_cast<double>(s.Q[static_cast<size_t>(j)]);
      qp[static_cast<size_t>(i * d + j)] = static_cast<double>(s.Qp[static_cast<size_t>(j)]);
    }
    b.focus.push_back(s.focus);
    b.pathology.push_back(s.pathology);
    b.label.push_back(s.label);
    b.prior_focus_rows.push_back(static_cast<std::int32_t>(i * n2k + s.focus));
    b.curr_focus_rows.push_back(static_cast<std::int32_t>(i * n2k + k + s.focus));
  }
  b.H0 = Tensor::from({b.B * n2k, d}, std::move(h0));
  b.Q = Tensor::from({b.B, d}, std::move(q));
  b.Qp = Tensor::from({b.B, d}, std::move(qp));
  return b;
}

std::vector<std::pair<Index, int>> Model::effective_gat_layers() const {
  std::vector<std::pair<Index, int>> layers = cfg_.gat_layers;
  if (layers.empty()) fail(ErrorKind::config, "model: at least one graph layer required");
  switch (cfg_.ablation) {
    case AblationType::A:
    case AblationType::D:
      return layers;
    case AblationType::B:
      return {layers.front()};
    case AblationType::C: {
      const Index extra = std::max<Index>(layers.back().first / 2, 4);
      layers.emplace_back(extra, 3);
      return layers;
    }
  }
  return layers;
}

namespace {
std::vector<Index> effective_head_dims(ModelKind kind, const ModelConfig& cfg) {
  std::vector<Index> dims = cfg.head_dims;
  if (dims.empty()) fail(ErrorKind::config, "model: head_dims must not be empty");
  if (kind == ModelKind::chexrelnet) return dims;  // graph ablations vary the GAT stack only
  switch (cfg.ablation) {
    case AblationType::A:
      return dims;
    case AblationType::B:
      for (auto& w : dims) w *= 2;
      return dims;
    case AblationType::C: {
      for (auto& w : dims) w *= 2;
      dims.push_back(std::max<Index>(dims.back() / 2, 4));
      return dims;
    }
    case AblationType::D:
      fail(ErrorKind::config, "ablation type D applies to the graph model only");
  }
  return dims;
}
}  // namespace

Model::Model(ModelKind kind, const ModelConfig& cfg, const graph::PairAdjacency& adj,
             std::uint64_t init_seed)
    : kind_(kind), cfg_(cfg), adj_(adj) {
  if (cfg_.d < 1 || cfg_.k < 1 || cfg_.M < 1) fail(ErrorKind::config, "model: d, k, M must be positive");
  if (cfg_.dropout < 0.0 || cfg_.dropout >= 1.0) fail(ErrorKind::config, "model: dropout must be in [0,1)");
  if (adj_.k != cfg_.k) fail(ErrorKind::dimension, "model: adjacency k does not match config k");
  StreamRng init(init_seed, rngstream::kInit);

  head_dims_ = effective_head_dims(kind_, cfg_);
  Index fused_width = 0;
  if (kind_ == ModelKind::chexrelnet) {
    edges_single_ = gat::with_self_loops(graph::to_edge_set(adj_, false));
    const auto layers = effective_gat_layers();
    Index in = cfg_.d;
    if (uses_gcn()) {
      gcn_norm_ = graph::gcn_norm_matrix(adj_);
      for (size_t i = 0; i < layers.size(); ++i) {
        gcn_params_.push_back(make_gcn_layer_params(store_, "gcn.L" + std::to_string(i), in,
                                                    layers[i].first, init));
        in = layers[i].first;
      }
    } else {
      for (size_t i = 0; i < layers.size(); ++i) {
        if (cfg_.concat_heads && layers[i].first % layers[i].second != 0)
          fail(ErrorKind::config, "model: concat_heads requires head count to divide layer width");
        const Index head_out = cfg_.concat_heads ? layers[i].first / layers[i].second : layers[i].first;
        gat_params_.push_back(make_gat_layer_params(store_, "gat.L" + std::to_string(i), in, head_out,
                                                    layers[i].second, init));
        in = layers[i].first;
      }
    }
    fused_width = in + 2 * cfg_.d;  // [focus ; Q ; Q']
  } else {
    fused_width = cfg_.d;  // twin encoder input
  }

  Index in = fused_width;
  for (size_t i = 0; i < head_dims_.size(); ++i) {
    DenseLayer layer;
    const std::string p =
        (kind_ == ModelKind::chexrelnet ? "head.fc" : "enc.fc") + std::to_string(i);
    layer.W = store_.declare_glorot(p + ".W", in, head_dims_[i], init);
    layer.b = store_.declare_zeros(p + ".b", {head_dims_[i]});
    head_layers_.push_back(layer);
    in = head_dims_[i];
  }
  const Index out_in = kind_ == ModelKind::chexrelnet ? head_dims_.back() : 2 * head_dims_.back();
  const int C = cfg_.classes_per_pathology();
  out_shared_W_ = store_.declare_glorot("out.shared.W", out_in, C, init);
  out_shared_b_ = store_.declare_zeros("out.shared.b", {C});
  out_delta_W_ = store_.declare_zeros("out.delta.W", {out_in, static_cast<Index>(cfg_.M) * C});
  out_delta_b_ = store_.declare_zeros("out.delta.b", {static_cast<Index>(cfg_.M) * C});
}

std::shared_ptr<const nd::EdgeSet> Model::batched_edges(int B) {
  auto it = edge_cache_.find(B);
  if (it != edge_cache_.end()) return it->second;
  auto e = std::make_shared<const nd::EdgeSet>(edges_single_->replicate(B));
  edge_cache_[B] = e;
  return e;
}

Tensor Model::dense_head(Tensor x, bool training, StreamRng* rng) {
  for (auto& layer : head_layers_) {
    x = nd::add_bias(nd::matmul(x, layer.W), layer.b);
    x = nd::activation(x, nd::Act::elu);
    if (&layer != &head_layers_.back())
      x = nd::dropout(x, cfg_.dropout, training, rng);
  }
  return x;
}

Tensor Model::encode_twin(Tensor x, bool training, StreamRng* rng) {
  return dense_head(std::move(x), training, rng);
}

// Shared change predictor plus zero-initialized per-pathology offsets; a
// pathology never seen in training falls back to the shared component,
// which is what lets the model transfer across pathology sets.
Tensor Model::output_layer(const Tensor& h) {
  Tensor shared = nd::add_bias(nd::matmul(h, out_shared_W_), out_shared_b_);
  Tensor delta = nd::add_bias(nd::matmul(h, out_delta_W_), out_delta_b_);
  return nd::add(nd::tile_cols(shared, cfg_.M), delta);
}

Tensor Model::forward(const Batch& batch, bool training, StreamRng* rng) {
  if (batch.B == 0) fail(ErrorKind::degenerate, "forward: empty batch");
  if (batch.H0.cols() != cfg_.d) fail(ErrorKind::dimension, "forward: batch width does not match model d");
  return kind_ == ModelKind::chexrelnet ? forward_graph(batch, training, rng)
                                        : forward_siamese(batch, training, rng);
}

Tensor Model::forward_graph(const Batch& batch, bool training, StreamRng* rng) {
  Tensor h = batch.H0;
  if (uses_gcn()) {
    for (auto& layer : gcn_params_) h = gat::gcn_layer(h, gcn_norm_, 2 * cfg_.k, layer, cfg_.phi);
  } else {
    auto edges = batched_edges(batch.B);
    gat::LayerOptions opt;
    opt.dropout_p = cfg_.dropout;
    opt.training = training;
    opt.rng = rng;
    opt.phi = cfg_.phi;
    opt.leaky_slope = cfg_.leaky_slope;
    opt.concat_heads = cfg_.concat_heads;
    for (auto& layer : gat_params_) h = gat::gat_layer(h, edges, layer, opt);
  }
  Tensor focus = gat::extract_focus_batch(h, batch.focus, cfg_.k);
  Tensor fused = nd::concat_cols({focus, batch.Q, batch.Qp});
  fused = nd::dropout(fused, cfg_.dropout, training, rng);
  Tensor out = dense_head(fused, training, rng);
  return output_layer(out);
}

Tensor Model::forward_siamese(const Batch& batch, bool training, StreamRng* rng) {
  Tensor a, b;
  if (kind_ == ModelKind::local) {
    a = nd::select_rows(batch.H0, batch.prior_focus_rows);
    b = nd::select_rows(batch.H0, batch.curr_focus_rows);
  } else {
    a = batch.Q;
    b = batch.Qp;
  }
  Tensor ea = encode_twin(a, training, rng);
  Tensor eb = encode_twin(b, training, rng);
  Tensor fused = nd::concat_cols({ea, eb});
  fused = nd::dropout(fused, cfg_.dropout, training, rng);
  return output_layer(fused);
}

Tensor Model::loss(const Tensor& logits, const Batch& batch) const {
  const int B = batch.B;
  if (cfg_.class_mode == ClassMode::two_class) {
    if (logits.rows() != B || logits.cols() != cfg_.M)
      fail(ErrorKind::dimension, "loss: logits must be B x M");
    std::vector<double> labels(static_cast<size_t>(B) * static_cast<size_t>(cfg_.M), 0.0);
    std::vector<double> mask(labels.size(), 0.0);
    for (int i = 0; i < B; ++i) {
      const int z = batch.label[static_cast<size_t>(i)];
      if (z != 0 && z != 1)
        fail(ErrorKind::config, "loss: sample carries label " + std::to_string(z) +
                                    " but the model is in two-class mode");
      const size_t cell = static_cast<size_t>(i) * static_cast<size_t>(cfg_.M) +
                          static_cast<size_t>(batch.pathology[static_cast<size_t>(i)]);
      labels[cell] = static_cast<double>(z);
      mask[cell] = 1.0;
    }
    Tensor lt = Tensor::from({B, cfg_.M}, std::move(labels));
    Tensor mt = Tensor::from({B, cfg_.M}, std::move(mask));
    return nd::bce_with_logits(logits, lt, mt);
  }
  if (logits.rows() != B || logits.cols() != static_cast<Index>(cfg_.M) * 3)
    fail(ErrorKind::dimension, "loss: logits must be B x (M*3)");
  std::vector<std::int32_t> groups, targets;
  for (int i = 0; i < B; ++i) {
    groups.push_back(static_cast<std::int32_t>(batch.pathology[static_cast<size_t>(i)]));
    const int z = batch.label[static_cast<size_t>(i)];
    if (z < 0 || z > 2) fail(ErrorKind::contract, "loss: label out of range");
    targets.push_back(static_cast<std::int32_t>(z));
  }
  Tensor sel = nd::select_col_groups(logits, std::move(groups), 3);
  return nd::softmax_xent(sel, std::move(targets));
}

int predict(std::span<const double> logit_row, int m, ClassMode mode) {
  if (mode == ClassMode::two_class) {
    if (m < 0 || m >= static_cast<int>(logit_row.size())) fail(ErrorKind::contract, "predict: pathology out of range");
    return logit_row[static_cast<size_t>(m)] >= 0.0 ? 1 : 0;  // sigmoid(z) >= 0.5 iff z >= 0
  }
  const size_t base = static_cast<size_t>(m) * 3;
  if (base + 3 > logit_row.size()) fail(ErrorKind::contract, "predict: pathology out of range");
  int best = 0;
  for (int c = 1; c < 3; ++c)
    if (logit_row[base + static_cast<size_t>(c)] > logit_row[base + static_cast<size_t>(best)]) best = c;
  return best;
}

}  // namespace chexrel::model
