#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "chexrel/tensor.hpp"

namespace chexrel::graph {

using nd::Index;

// For each (region, pathology) pair, the set of image ids in which that
// region carries that pathology. Built from the training split only.
struct RegionLabelIndex {
  int k = 0;
  int M = 0;
  // occ[s][m] is sorted and duplicate-free
  std::vector<std::vector<std::vector<std::int32_t>>> occ;

  static RegionLabelIndex empty_index(int k, int M);
  void add(int region, int pathology, std::int32_t image_id);
  void finalize();  // sort + dedupe
  bool has_any() const;
};

// Per-pathology Jaccard similarity averaged over pathologies, with an empty
// union contributing 0. The diagonal is 1 for any region that occurs at all,
// 0 otherwise.
double jaccard(const RegionLabelIndex& index, int s, int t);

struct CooccurrenceMatrix {
  int k = 0;
  std::vector<double> J;  // k*k row-major
  double at(int s, int t) const { return J[static_cast<size_t>(s) * static_cast<size_t>(k) + static_cast<size_t>(t)]; }
};

CooccurrenceMatrix compute_cooccurrence(const RegionLabelIndex& index);

struct BinaryMatrix {
  int n = 0;
  std::vector<std::uint8_t> a;  // n*n row-major, values 0/1
  std::uint8_t at(int i, int j) const { return a[static_cast<size_t>(i) * static_cast<size_t>(n) + static_cast<size_t>(j)]; }
  void set(int i, int j, std::uint8_t v) { a[static_cast<size_t>(i) * static_cast<size_t>(n) + static_cast<size_t>(j)] = v; }
};

// 1 iff J >= tau, with the diagonal zeroed (self-loops are added by the
// attention softmax, not stored)
BinaryMatrix threshold_adjacency(const CooccurrenceMatrix& J, double tau);

// 2k x 2k block adjacency for one exam pair: both diagonal blocks carry the
// intra-image adjacency, the upper off-diagonal block is the identity
// (directed prior -> current edges), the lower one is zero unless
// symmetric_inter is set.
struct PairAdjacency {
  int k = 0;
  BinaryMatrix intra;
  bool symmetric_inter = false;

  BinaryMatrix full() const;  // materialized 2k x 2k matrix
};

PairAdjacency assemble_pair_adjacency(const BinaryMatrix& intra, int k, bool symmetric_inter = false);

// directed edge list over the 2k nodes; self-loops excluded
nd::EdgeSet to_edge_set(const PairAdjacency& adj, bool add_self_loops);

// normalized dense operator for graph convolution:
// D^-1/2 (sym(A) + I) D^-1/2 over the full 2k x 2k adjacency
std::shared_ptr<const std::vector<double>> gcn_norm_matrix(const PairAdjacency& adj);

// export formats for the CLI
std::string adjacency_to_text(const PairAdjacency& adj);
std::string adjacency_to_json(const PairAdjacency& adj);

}  // namespace chexrel::graph
