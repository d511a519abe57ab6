#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "chexrel/rng.hpp"
#include "chexrel/tensor.hpp"

namespace chexrel::nd {

// Named trainable parameters plus their Adam moment buffers. Iteration order
// is the name order of the map, which fixes initialization, clipping and
// checkpoint layout across runs.
class ParamStore {
 public:
  struct Entry {
    Tensor t;
    std::vector<double> m, v;
  };

  Tensor declare(const std::string& name, Shape shape, std::vector<double> data);
  Tensor declare_zeros(const std::string& name, Shape shape);
  Tensor declare_glorot(const std::string& name, Index fan_in, Index fan_out, StreamRng& rng);

  bool contains(const std::string& name) const { return entries_.count(name) > 0; }
  Tensor get(const std::string& name) const;
  Entry& entry(const std::string& name);

  std::vector<std::string> names() const;
  std::int64_t total_params() const;
  std::int64_t step() const { return step_; }
  void set_step(std::int64_t s) { step_ = s; }

  void zero_grads();
  void clear_grads();

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  size_t size() const { return entries_.size(); }

  // deep copy of values and moments (fresh nodes)
  ParamStore clone() const;
  // copy values/moments/step from a clone back into the live tensors
  void restore(const ParamStore& snapshot);

 private:
  std::map<std::string, Entry> entries_;
  std::int64_t step_ = 0;
};

// Bias-corrected Adam, applied in place; clears gradients afterwards.
// Throws incomplete_backward if any parameter is missing its gradient.
void adam_step(ParamStore& store, double lr, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8);

// Scales every gradient by max_norm/norm when the global L2 norm exceeds
// max_norm. Returns the pre-clip norm.
double clip_global_norm(ParamStore& store, double max_norm);

// Checkpoint file: magic "LRGT", version u32, param count u64, then one
// record per parameter (u32 name length, name bytes, u64 rank, dims, f64
// data, all little-endian), then m and v records per parameter in the same
// layout, then the step counter u64.
void save_checkpoint(const ParamStore& store, const std::string& path);
// loads into an already-declared store; names and shapes must match
void load_checkpoint(ParamStore& store, const std::string& path);

}  // namespace chexrel::nd
