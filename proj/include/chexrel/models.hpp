#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "chexrel/gatnet.hpp"
#include "chexrel/graphbuild.hpp"
#include "chexrel/params.hpp"

namespace chexrel::model {

using nd::Index;
using nd::Tensor;

enum class ModelKind { chexrelnet, local, global };
enum class ClassMode { two_class, three_class };
enum class AblationType { A, B, C, D };

ModelKind parse_model_kind(const std::string& s);
std::string model_kind_name(ModelKind k);
AblationType parse_ablation(const std::string& s);
std::string ablation_name(AblationType t);
ClassMode parse_class_mode(const std::string& s);
std::string class_mode_name(ClassMode m);

struct ModelConfig {
  Index d = 2048;  // per-region feature width
  int k = 7;       // anatomical regions per exam
  int M = 9;       // pathologies
  std::vector<std::pair<Index, int>> gat_layers = {{2048, 5}, {1024, 3}};  // (width, heads)
  std::vector<Index> head_dims = {768, 128};
  ClassMode class_mode = ClassMode::two_class;
  AblationType ablation = AblationType::A;
  double dropout = 0.5;
  bool concat_heads = false;
  bool symmetric_inter = false;
  nd::Act phi = nd::Act::elu;
  double leaky_slope = 0.2;

  int classes_per_pathology() const { return class_mode == ClassMode::three_class ? 3 : 1; }
};

// One localized comparison relation: prior/current region features, global
// features, the focus region, the pathology, and the change label
// (0 improved, 1 worsened, 2 no change).
struct ComparisonSample {
  std::uint8_t pathology = 0;
  std::uint8_t label = 0;
  std::uint8_t focus = 0;
  std::vector<float> R, Rp;  // k x d row-major
  std::vector<float> Q, Qp;  // d

  bool operator==(const ComparisonSample&) const = default;
};

// Tensors for one minibatch. H0 stacks each sample's [R; R'] into 2k rows.
struct Batch {
  int B = 0;
  Tensor H0;      // (B*2k) x d
  Tensor Q, Qp;   // B x d
  std::vector<int> focus, pathology, label;
  std::vector<std::int32_t> prior_focus_rows, curr_focus_rows;  // into H0
};

Batch make_batch(const std::vector<ComparisonSample>& samples, const std::vector<std::int32_t>& ids,
                 int k, Index d);

// The graph model and the two siamese baselines behind one interface.
// Parameters are declared at construction (seeded Glorot for weights, zeros
// for biases and attention vectors) and live in the owned ParamStore.
class Model {
 public:
  Model(ModelKind kind, const ModelConfig& cfg, const graph::PairAdjacency& adj,
        std::uint64_t init_seed);

  // logits: B x M in two-class mode, B x (M*3) in three-class mode
  Tensor forward(const Batch& batch, bool training = false, StreamRng* rng = nullptr);
  Tensor loss(const Tensor& logits, const Batch& batch) const;

  ModelKind kind() const { return kind_; }
  const ModelConfig& config() const { return cfg_; }
  std::int64_t param_count() const { return store_.total_params(); }
  nd::ParamStore& params() { return store_; }
  const graph::PairAdjacency& adjacency() const { return adj_; }

  // effective graph stack after applying the ablation type
  std::vector<std::pair<Index, int>> effective_gat_layers() const;
  bool uses_gcn() const { return kind_ == ModelKind::chexrelnet && cfg_.ablation == AblationType::D; }

 private:
  Tensor forward_graph(const Batch& batch, bool training, StreamRng* rng);
  Tensor forward_siamese(const Batch& batch, bool training, StreamRng* rng);
  Tensor dense_head(Tensor x, bool training, StreamRng* rng);
  Tensor encode_twin(Tensor x, bool training, StreamRng* rng);
  Tensor output_layer(const Tensor& h);
  std::shared_ptr<const nd::EdgeSet> batched_edges(int B);

  ModelKind kind_;
  ModelConfig cfg_;
  graph::PairAdjacency adj_;
  nd::ParamStore store_;

  std::vector<gat::GatLayerParams> gat_params_;
  std::vector<gat::GcnLayerParams> gcn_params_;
  struct DenseLayer {
    Tensor W, b;
  };
  std::vector<DenseLayer> head_layers_;  // fusion head (graph) or twin encoder (baselines)
  Tensor out_shared_W_, out_shared_b_;   // shared change predictor
  Tensor out_delta_W_, out_delta_b_;     // per-pathology offsets, zero-initialized
  std::vector<Index> head_dims_;

  std::shared_ptr<const nd::EdgeSet> edges_single_;  // with self-loops
  std::shared_ptr<const std::vector<double>> gcn_norm_;
  std::map<int, std::shared_ptr<const nd::EdgeSet>> edge_cache_;
};

// class prediction for pathology m from one sample's logit row
int predict(std::span<const double> logit_row, int m, ClassMode mode);

}  // namespace chexrel::model
