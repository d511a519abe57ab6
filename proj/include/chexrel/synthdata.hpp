#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "chexrel/graphbuild.hpp"
#include "chexrel/models.hpp"
#include "chexrel/rng.hpp"

namespace chexrel::synth {

using nd::Index;

std::vector<double> table1_pathology_mix();

// Deterministic generator standing in for the restricted comparison-relations
// data. Latent per-region severities drive both the region-pathology flags
// (hence the co-occurrence graph) and the pair features. The change label is
// a weighted combination of the focus-region change and the correlated
// changes of its neighbors in the ground-truth region graph, so a classifier
// must read neighboring regions whenever cross_region_strength > 0.
struct SynthConfig {
  int n_pairs = 2000;
  int k = 7;
  Index d = 64;
  int M = 9;
  double noise_sigma = 0.3;           // feature noise on top of the projections
  double cross_region_strength = 0.7; // rho: neighbor change = rho*(delta + neighbor_noise*eps)
  double no_change_fraction = 0.0;    // fraction of pairs labeled "no change"
  std::vector<double> pathology_mix = table1_pathology_mix();
  std::uint64_t seed = 42;
  std::array<double, 3> split_fractions = {0.7, 0.1, 0.2};

  // explicit parameters of the generative process
  double focus_weight = 0.3;      // weight of the focus-region change in the label
  double neighbor_weight = 1.0;   // weight of the mean neighbor change
  double neighbor_noise = 5.0;    // eps scale inside the correlated neighbor change
  double background_noise = 2.5;  // change scale of non-neighbor regions
  double no_change_scale = 0.05;  // shrink factor applied to all changes of a no-change pair
  double region_activation_prob = 0.9;     // clique member carries the epicenter pathology
  double background_activation_prob = 0.02;

  bool operator==(const SynthConfig&) const = default;
};

struct Dataset {
  SynthConfig config;
  std::vector<model::ComparisonSample> samples;   // one per pair
  std::vector<float> severities;                  // (2*n_pairs) x k x M; image 2i prior, 2i+1 current
  std::vector<std::int32_t> train_ids, val_ids, test_ids;  // pair ids

  int n_images() const { return 2 * config.n_pairs; }
  std::span<const float> image_severities(int image) const;
  bool flag(int image, int region, int pathology) const;
  const std::vector<std::int32_t>& split_ids(const std::string& split) const;

  bool operator==(const Dataset&) const = default;
};

// Two fixed cliques over the k regions; the label process couples a focus
// region to its clique neighbors and the co-occurrence statistics recover
// exactly these cliques at the default threshold.
std::vector<std::vector<int>> region_neighbors(int k);

Dataset generate(const SynthConfig& config);

// occurrence sets over the training pairs' images only
graph::RegionLabelIndex label_index(const Dataset& ds);

void write_dataset(const Dataset& ds, const std::string& dir);
Dataset read_dataset(const std::string& dir);

std::string config_to_json(const SynthConfig& c);
SynthConfig config_from_json_text(const std::string& text);

// Reference classifiers reading the latent severities directly. The full
// oracle recomputes the label statistic from the stored latent changes; the
// focus-only oracle is the best predictor given just the focus-region change.
double oracle_full_accuracy(const Dataset& ds, std::span<const std::int32_t> pair_ids);
double oracle_focus_accuracy(const Dataset& ds, std::span<const std::int32_t> pair_ids);
// fraction of pairs where the two oracles predict the same class
double oracle_agreement(const Dataset& ds, std::span<const std::int32_t> pair_ids);

}  // namespace chexrel::synth
