#include "chexrel/params.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace chexrel::nd {

Tensor ParamStore::declare(const std::string& name, Shape shape, std::vector<double> data) {
  if (entries_.count(name)) fail(ErrorKind::contract, "parameter '" + name + "' declared twice");
  Tensor t = Tensor::param(std::move(shape), std::move(data));
  Entry e;
  e.t = t;
  e.m.assign(static_cast<size_t>(t.numel()), 0.0);
  e.v.assign(static_cast<size_t>(t.numel()), 0.0);
  entries_.emplace(name, std::move(e));
  return t;
}

Tensor ParamStore::declare_zeros(const std::string& name, Shape shape) {
  const Index n = numel_of(shape);
  return declare(name, std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0));
}

Tensor ParamStore::declare_glorot(const std::string& name, Index fan_in, Index fan_out, StreamRng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> data(static_cast<size_t>(fan_in * fan_out));
  for (auto& v : data) v = rng.uniform(-limit, limit);
  return declare(name, {fan_in, fan_out}, std::move(data));
}

Tensor ParamStore::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) fail(ErrorKind::contract, "unknown parameter '" + name + "'");
  return it->second.t;
}

ParamStore::Entry& ParamStore::entry(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) fail(ErrorKind::contract, "unknown parameter '" + name + "'");
  return it->second;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

std::int64_t ParamStore::total_params() const {
  std::int64_t n = 0;
  for (const auto& [k, e] : entries_) n += e.t.numel();
  return n;
}

void ParamStore::zero_grads() {
  for (auto& [k, e] : entries_) e.t.zero_grad();
}

void ParamStore::clear_grads() {
  for (auto& [k, e] : entries_) e.t.drop_grad();
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (const auto& [k, e] : entries_) {
    Tensor t = Tensor::param(e.t.shape(), std::vector<double>(e.t.data().begin(), e.t.data().end()));
    Entry ne;
    ne.t = t;
    ne.m = e.m;
    ne.v = e.v;
    out.entries_.emplace(k, std::move(ne));
  }
  out.step_ = step_;
  return out;
}

void ParamStore::restore(const ParamStore& snapshot) {
  if (snapshot.entries_.size() != entries_.size())
    fail(ErrorKind::contract, "restore: parameter sets differ");
  for (auto& [k, e] : entries_) {
    auto it = snapshot.entries_.find(k);
    if (it == snapshot.entries_.end() || it->second.t.shape() != e.t.shape())
      fail(ErrorKind::contract, "restore: parameter '" + k + "' missing or reshaped");
    auto dst = e.t.mutable_data();
    auto src = it->second.t.data();
    std::copy(src.begin(), src.end(), dst.begin());
    e.m = it->second.m;
    e.v = it->second.v;
  }
  step_ = snapshot.step_;
}

void adam_step(ParamStore& store, double lr, double beta1, double beta2, double eps) {
  for (auto& [name, e] : store) {
    if (!e.t.has_grad())
      fail(ErrorKind::incomplete_backward,
           "adam_step: parameter '" + name + "' has no gradient; run backward first");
  }
  store.set_step(store.step() + 1);
  const double t = static_cast<double>(store.step());
  const double bc1 = 1.0 - std::pow(beta1, t);
  const double bc2 = 1.0 - std::pow(beta2, t);
  for (auto& [name, e] : store) {
    auto data = e.t.mutable_data();
    auto grad = e.t.grad();
    const size_t n = data.size();
    for (size_t i = 0; i < n; ++i) {
      const double g = grad[i];
      e.m[i] = beta1 * e.m[i] + (1.0 - beta1) * g;
      e.v[i] = beta2 * e.v[i] + (1.0 - beta2) * g * g;
      const double mhat = e.m[i] / bc1;
      const double vhat = e.v[i] / bc2;
      data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
  store.clear_grads();
}

double clip_global_norm(ParamStore& store, double max_norm) {
  if (max_norm <= 0.0) fail(ErrorKind::config, "clip_global_norm: max_norm must be positive");
  double sq = 0.0;
  for (auto& [name, e] : store) {
    if (!e.t.has_grad())
      fail(ErrorKind::incomplete_backward,
           "clip_global_norm: parameter '" + name + "' has no gradient");
    for (double g : e.t.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& [name, e] : store)
      for (double& g : e.t.mutable_grad()) g *= f;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// checkpoint io

namespace {
constexpr char kMagic[4] = {'L', 'R', 'G', 'T'};
constexpr std::uint32_t kVersion = 1;

struct Writer {
  std::ofstream f;
  explicit Writer(const std::string& path) : f(path, std::ios::binary) {
    if (!f) fail(ErrorKind::io, "cannot open '" + path + "' for writing");
  }
  void bytes(const void* p, size_t n) { f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void f64s(const double* p, size_t n) { bytes(p, n * 8); }
};

struct Reader {
  std::ifstream f;
  std::uint64_t offset = 0;
  std::string path;
  explicit Reader(const std::string& p) : f(p, std::ios::binary), path(p) {
    if (!f) fail(ErrorKind::io, "cannot open '" + p + "' for reading");
  }
  void bytes(void* p, size_t n) {
    f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(f.gcount()) != n)
      fail(ErrorKind::parse, "truncated checkpoint '" + path + "' at byte offset " + std::to_string(offset));
    offset += n;
  }
  std::uint32_t u32() { std::uint32_t v; bytes(&v, 4); return v; }
  std::uint64_t u64() { std::uint64_t v; bytes(&v, 8); return v; }
};

void write_record(Writer& w, const std::string& name, const Shape& shape, const double* data, size_t n) {
  w.u32(static_cast<std::uint32_t>(name.size()));
  w.bytes(name.data(), name.size());
  w.u64(static_cast<std::uint64_t>(shape.size()));
  for (Index d : shape) w.u64(static_cast<std::uint64_t>(d));
  w.f64s(data, n);
}

struct Record {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

Record read_record(Reader& r) {
  Record rec;
  const std::uint32_t len = r.u32();
  if (len > 4096) fail(ErrorKind::parse, "implausible name length in checkpoint at byte offset " +
                                             std::to_string(r.offset - 4));
  rec.name.resize(len);
  if (len) r.bytes(rec.name.data(), len);
  const std::uint64_t rank = r.u64();
  if (rank > 8) fail(ErrorKind::parse, "implausible rank in checkpoint at byte offset " +
                                           std::to_string(r.offset - 8));
  std::uint64_t numel = 1;
  for (std::uint64_t i = 0; i < rank; ++i) {
    const std::uint64_t d = r.u64();
    rec.shape.push_back(static_cast<Index>(d));
    numel *= d;
  }
  rec.data.resize(numel);
  if (numel) r.bytes(rec.data.data(), numel * 8);
  return rec;
}
}  // namespace

void save_checkpoint(const ParamStore& store, const std::string& path) {
  Writer w(path);
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  w.u64(store.size());
  for (const auto& [name, e] : store)
    write_record(w, name, e.t.shape(), e.t.data().data(), e.t.data().size());
  for (const auto& [name, e] : store) {
    write_record(w, name, e.t.shape(), e.m.data(), e.m.size());
    write_record(w, name, e.t.shape(), e.v.data(), e.v.size());
  }
  w.u64(static_cast<std::uint64_t>(store.step()));
  if (!w.f) fail(ErrorKind::io, "write failed for '" + path + "'");
}

void load_checkpoint(ParamStore& store, const std::string& path) {
  Reader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    fail(ErrorKind::parse, "'" + path + "' is not a checkpoint (bad magic at byte offset 0)");
  const std::uint32_t version = r.u32();
  if (version != kVersion)
    fail(ErrorKind::unsupported_version,
         "checkpoint version " + std::to_string(version) + " unsupported (expected " +
             std::to_string(kVersion) + ")");
  const std::uint64_t count = r.u64();
  if (count != store.size())
    fail(ErrorKind::contract, "checkpoint has " + std::to_string(count) + " parameters, model has " +
                                  std::to_string(store.size()));
  auto apply = [&](std::vector<double>& target, const Record& rec) {
    if (rec.data.size() != target.size())
      fail(ErrorKind::contract, "checkpoint parameter '" + rec.name + "' has wrong size");
    target = rec.data;
  };
  for (std::uint64_t i = 0; i < count; ++i) {
    Record rec = read_record(r);
    auto& e = store.entry(rec.name);
    if (rec.shape != e.t.shape())
      fail(ErrorKind::contract, "checkpoint parameter '" + rec.name + "' has shape " +
                                    shape_str(rec.shape) + ", model expects " + shape_str(e.t.shape()));
    auto dst = e.t.mutable_data();
    if (rec.data.size() != dst.size())
      fail(ErrorKind::contract, "checkpoint parameter '" + rec.name + "' has wrong size");
    std::copy(rec.data.begin(), rec.data.end(), dst.begin());
  }
  for (std::uint64_t i = 0; i < count; ++i) {
    Record m = read_record(r);
    Record v = read_record(r);
    if (m.name != v.name) fail(ErrorKind::parse, "moment records out of order in '" + path + "'");
    auto& e = store.entry(m.name);
    apply(e.m, m);
    apply(e.v, v);
  }
  store.set_step(static_cast<std::int64_t>(r.u64()));
}

}  // namespace chexrel::nd
