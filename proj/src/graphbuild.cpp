#include "chexrel/graphbuild.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "chexrel/error.hpp"

namespace chexrel::graph {

RegionLabelIndex RegionLabelIndex::empty_index(int k, int M) {
  if (k <= 0 || M <= 0) fail(ErrorKind::config, "region index: k and M must be positive");
  RegionLabelIndex idx;
  idx.k = k;
  idx.M = M;
  idx.occ.assign(static_cast<size_t>(k), std::vector<std::vector<std::int32_t>>(static_cast<size_t>(M)));
  return idx;
}

void RegionLabelIndex::add(int region, int pathology, std::int32_t image_id) {
  if (region < 0 || region >= k || pathology < 0 || pathology >= M)
    fail(ErrorKind::contract, "region index: id out of range");
  occ[static_cast<size_t>(region)][static_cast<size_t>(pathology)].push_back(image_id);
}

void RegionLabelIndex::finalize() {
  for (auto& row : occ)
    for (auto& set : row) {
      std::sort(set.begin(), set.end());
      set.erase(std::unique(set.begin(), set.end()), set.end());
    }
}

bool RegionLabelIndex::has_any() const {
  for (const auto& row : occ)
    for (const auto& set : row)
      if (!set.empty()) return true;
  return false;
}

namespace {
std::int64_t intersection_size(const std::vector<std::int32_t>& a, const std::vector<std::int32_t>& b) {
  std::int64_t n = 0;
  size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] < b[j]) ++i;
    else if (b[j] < a[i]) ++j;
    else { ++n; ++i; ++j; }
  }
  return n;
}

bool region_has_any(const RegionLabelIndex& index, int s) {
  for (const auto& set : index.occ[static_cast<size_t>(s)])
    if (!set.empty()) return true;
  return false;
}
}  // namespace

double jaccard(const RegionLabelIndex& index, int s, int t) {
  if (s < 0 || s >= index.k || t < 0 || t >= index.k)
    fail(ErrorKind::contract, "jaccard: region id out of range");
  if (s == t) return region_has_any(index, s) ? 1.0 : 0.0;
  double acc = 0.0;
  for (int m = 0; m < index.M; ++m) {
    const auto& a = index.occ[static_cast<size_t>(s)][static_cast<size_t>(m)];
    const auto& b = index.occ[static_cast<size_t>(t)][static_cast<size_t>(m)];
    const std::int64_t inter = intersection_size(a, b);
    const std::int64_t uni = static_cast<std::int64_t>(a.size()) + static_cast<std::int64_t>(b.size()) - inter;
    if (uni > 0) acc += static_cast<double>(inter) / static_cast<double>(uni);
  }
  return acc / static_cast<double>(index.M);
}

CooccurrenceMatrix compute_cooccurrence(const RegionLabelIndex& index) {
  if (!index.has_any()) fail(ErrorKind::degenerate, "co-occurrence: index has no occurrences");
  CooccurrenceMatrix out;
  out.k = index.k;
  out.J.assign(static_cast<size_t>(index.k) * static_cast<size_t>(index.k), 0.0);
  for (int s = 0; s < index.k; ++s)
    for (int t = s; t < index.k; ++t) {
      const double j = jaccard(index, s, t);
      out.J[static_cast<size_t>(s) * static_cast<size_t>(index.k) + static_cast<size_t>(t)] = j;
      out.J[static_cast<size_t>(t) * static_cast<size_t>(index.k) + static_cast<size_t>(s)] = j;
    }
  return out;
}

BinaryMatrix threshold_adjacency(const CooccurrenceMatrix& J, double tau) {
  if (tau < 0.0 || tau > 1.0) fail(ErrorKind::config, "threshold_adjacency: tau must be in [0,1]");
  BinaryMatrix out;
  out.n = J.k;
  out.a.assign(static_cast<size_t>(J.k) * static_cast<size_t>(J.k), 0);
  for (int s = 0; s < J.k; ++s)
    for (int t = 0; t < J.k; ++t)
      out.set(s, t, (s != t && J.at(s, t) >= tau) ? 1 : 0);
  return out;
}

PairAdjacency assemble_pair_adjacency(const BinaryMatrix& intra, int k, bool symmetric_inter) {
  if (intra.n != k) fail(ErrorKind::dimension, "assemble_pair_adjacency: intra matrix is not k x k");
  for (int s = 0; s < k; ++s) {
    if (intra.at(s, s) != 0) fail(ErrorKind::contract, "assemble_pair_adjacency: intra diagonal must be zero");
    for (int t = 0; t < k; ++t)
      if (intra.at(s, t) != intra.at(t, s))
        fail(ErrorKind::contract, "assemble_pair_adjacency: intra adjacency is not symmetric");
  }
  PairAdjacency adj;
  adj.k = k;
  adj.intra = intra;
  adj.symmetric_inter = symmetric_inter;
  return adj;
}

BinaryMatrix PairAdjacency::full() const {
  BinaryMatrix out;
  out.n = 2 * k;
  out.a.assign(static_cast<size_t>(out.n) * static_cast<size_t>(out.n), 0);
  for (int s = 0; s < k; ++s)
    for (int t = 0; t < k; ++t) {
      out.set(s, t, intra.at(s, t));
      out.set(k + s, k + t, intra.at(s, t));
    }
  for (int s = 0; s < k; ++s) {
    out.set(s, s + k, 1);
    if (symmetric_inter) out.set(s + k, s, 1);
  }
  return out;
}

nd::EdgeSet to_edge_set(const PairAdjacency& adj, bool add_self_loops) {
  const BinaryMatrix a = adj.full();
  std::vector<std::int32_t> src, dst;
  for (int i = 0; i < a.n; ++i)
    for (int j = 0; j < a.n; ++j)
      if (a.at(i, j)) {
        src.push_back(i);
        dst.push_back(j);
      }
  if (add_self_loops)
    for (int i = 0; i < a.n; ++i) {
      src.push_back(i);
      dst.push_back(i);
    }
  return nd::EdgeSet::build(a.n, std::move(src), std::move(dst));
}

std::shared_ptr<const std::vector<double>> gcn_norm_matrix(const PairAdjacency& adj) {
  const BinaryMatrix a = adj.full();
  const int n = a.n;
  std::vector<double> sym(static_cast<size_t>(n) * static_cast<size_t>(n), 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (a.at(i, j) || a.at(j, i)) {
        sym[static_cast<size_t>(i) * static_cast<size_t>(n) + static_cast<size_t>(j)] = 1.0;
      }
  for (int i = 0; i < n; ++i) sym[static_cast<size_t>(i) * static_cast<size_t>(n) + static_cast<size_t>(i)] = 1.0;
  std::vector<double> deg(static_cast<size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    double d = 0.0;
    for (int j = 0; j < n; ++j) d += sym[static_cast<size_t>(i) * static_cast<size_t>(n) + static_cast<size_t>(j)];
    deg[static_cast<size_t>(i)] = 1.0 / std::sqrt(d);
  }
  auto out = std::make_shared<std::vector<double>>(static_cast<size_t>(n) * static_cast<size_t>(n), 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      (*out)[static_cast<size_t>(i) * static_cast<size_t>(n) + static_cast<size_t>(j)] =
          deg[static_cast<size_t>(i)] * sym[static_cast<size_t>(i) * static_cast<size_t>(n) + static_cast<size_t>(j)] *
          deg[static_cast<size_t>(j)];
  return out;
}

std::string adjacency_to_text(const PairAdjacency& adj) {
  const BinaryMatrix a = adj.full();
  std::ostringstream os;
  for (int i = 0; i < a.n; ++i) {
    for (int j = 0; j < a.n; ++j) {
      if (j) os << ' ';
      os << static_cast<int>(a.at(i, j));
    }
    os << '\n';
  }
  return os.str();
}

std::string adjacency_to_json(const PairAdjacency& adj) {
  std::ostringstream os;
  os << "{\"k\":" << adj.k << ",\"intra_edges\":[";
  bool first = true;
  for (int s = 0; s < adj.k; ++s)
    for (int t = s + 1; t < adj.k; ++t)
      if (adj.intra.at(s, t)) {
        if (!first) os << ',';
        os << '[' << s << ',' << t << ']';
        first = false;
      }
  os << "],\"inter_edges\":[";
  for (int s = 0; s < adj.k; ++s) {
    if (s) os << ',';
    os << '[' << s << ',' << s + adj.k << ']';
  }
  os << "]}";
  return os.str();
}

}  // namespace chexrel::graph
