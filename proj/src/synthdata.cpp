#include "chexrel/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "chexrel/error.hpp"

namespace chexrel::synth {

using nlohmann::json;

std::vector<double> table1_pathology_mix() {
  // image-pair counts per pathology label, normalized
  static const double counts[9] = {32524, 13122, 9660, 1958, 12090, 2728, 3332, 674, 3814};
  double total = 0.0;
  for (double c : counts) total += c;
  std::vector<double> mix(9);
  for (int i = 0; i < 9; ++i) mix[static_cast<size_t>(i)] = counts[i] / total;
  return mix;
}

std::vector<std::vector<int>> region_neighbors(int k) {
  // two cliques: [0, k/2) and [k/2, k)
  const int split = k / 2;
  std::vector<std::vector<int>> nbr(static_cast<size_t>(k));
  for (int r = 0; r < k; ++r) {
    const int lo = r < split ? 0 : split;
    const int hi = r < split ? split : k;
    for (int j = lo; j < hi; ++j)
      if (j != r) nbr[static_cast<size_t>(r)].push_back(j);
  }
  return nbr;
}

namespace {
int clique_of(int r, int k) { return r < k / 2 ? 0 : 1; }

void validate(const SynthConfig& c) {
  if (c.n_pairs <= 0) fail(ErrorKind::config, "synth: n_pairs must be positive");
  if (c.k <= 0 || c.M <= 0 || c.d <= 0) fail(ErrorKind::config, "synth: k, M, d must be positive");
  if (static_cast<int>(c.pathology_mix.size()) != c.M)
    fail(ErrorKind::config, "synth: pathology_mix must have M entries");
  double s = 0.0;
  for (double p : c.pathology_mix) {
    if (p < 0.0) fail(ErrorKind::config, "synth: pathology_mix entries must be non-negative");
    s += p;
  }
  if (std::abs(s - 1.0) > 1e-9) fail(ErrorKind::config, "synth: pathology_mix must sum to 1");
  double f = c.split_fractions[0] + c.split_fractions[1] + c.split_fractions[2];
  if (std::abs(f - 1.0) > 1e-9) fail(ErrorKind::config, "synth: split fractions must sum to 1");
  if (c.cross_region_strength < 0.0 || c.cross_region_strength > 1.0)
    fail(ErrorKind::config, "synth: cross_region_strength must be in [0,1]");
  if (c.no_change_fraction < 0.0 || c.no_change_fraction > 1.0)
    fail(ErrorKind::config, "synth: no_change_fraction must be in [0,1]");
  if (c.noise_sigma < 0.0) fail(ErrorKind::config, "synth: noise_sigma must be non-negative");
}

// fixed projection matrices, drawn once per dataset from the seed
std::vector<double> projection(const SynthConfig& c, std::uint64_t which) {
  StreamRng rng(c.seed, rngstream::kProjection, which);
  std::vector<double> P(static_cast<size_t>(c.d) * static_cast<size_t>(c.M));
  const double scale = 1.0 / std::sqrt(static_cast<double>(c.M));
  for (auto& v : P) v = scale * rng.normal();
  return P;
}

int sample_category(const std::vector<double>& mix, double u) {
  double acc = 0.0;
  for (size_t i = 0; i < mix.size(); ++i) {
    acc += mix[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(mix.size()) - 1;
}
}  // namespace

std::span<const float> Dataset::image_severities(int image) const {
  const size_t stride = static_cast<size_t>(config.k) * static_cast<size_t>(config.M);
  return std::span<const float>(severities.data() + static_cast<size_t>(image) * stride, stride);
}

bool Dataset::flag(int image, int region, int pathology) const {
  return image_severities(image)[static_cast<size_t>(region) * static_cast<size_t>(config.M) +
                                 static_cast<size_t>(pathology)] > 0.0f;
}

const std::vector<std::int32_t>& Dataset::split_ids(const std::string& split) const {
  if (split == "train") return train_ids;
  if (split == "val") return val_ids;
  if (split == "test") return test_ids;
  fail(ErrorKind::config, "unknown split '" + split + "' (expected train|val|test)");
}

Dataset generate(const SynthConfig& config) {
  validate(config);
  const int n = config.n_pairs, k = config.k, M = config.M;
  const Index d = config.d;
  const auto neighbors = region_neighbors(k);
  const std::vector<double> Pr = projection(config, 0);  // region features
  const std::vector<double> Pg = projection(config, 1);  // global features

  Dataset ds;
  ds.config = config;
  ds.samples.resize(static_cast<size_t>(n));
  ds.severities.assign(static_cast<size_t>(2 * n) * static_cast<size_t>(k) * static_cast<size_t>(M), 0.0f);

  const size_t sev_stride = static_cast<size_t>(k) * static_cast<size_t>(M);

#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    StreamRng rng_path(config.seed, rngstream::kPathology, static_cast<std::uint64_t>(i));
    StreamRng rng_sev(config.seed, rngstream::kSeverity, static_cast<std::uint64_t>(i));
    StreamRng rng_chg(config.seed, rngstream::kChange, static_cast<std::uint64_t>(i));
    StreamRng rng_noise(config.seed, rngstream::kFeatureNoise, static_cast<std::uint64_t>(i));

    const int m = sample_category(config.pathology_mix, rng_path.uniform());
    const int focus = static_cast<int>(rng_path.below(static_cast<std::uint64_t>(k)));
    const bool is_no_change = rng_path.uniform() < config.no_change_fraction;

    // prior severities: per pathology, one epicenter activates its clique
    std::vector<double> sev(sev_stride), sev2(sev_stride);
    for (int mm = 0; mm < M; ++mm) {
      const int epi = static_cast<int>(rng_sev.below(static_cast<std::uint64_t>(k)));
      for (int r = 0; r < k; ++r) {
        const bool candidate = clique_of(r, k) == clique_of(epi, k);
        const double p = candidate ? config.region_activation_prob : config.background_activation_prob;
        const bool active = rng_sev.uniform() < p;
        const double mag = 0.5 + 0.5 * std::abs(rng_sev.normal());
        sev[static_cast<size_t>(r) * static_cast<size_t>(M) + static_cast<size_t>(mm)] = active ? mag : -mag;
      }
    }

    // change of the sample's pathology: focus delta, correlated neighbors,
    // background noise elsewhere
    std::vector<double> change(static_cast<size_t>(k), 0.0);
    const double delta = rng_chg.normal();
    change[static_cast<size_t>(focus)] = delta;
    const auto& nbr = neighbors[static_cast<size_t>(focus)];
    double nbr_sum = 0.0;
    for (int j : nbr) {
      const double c = config.cross_region_strength * (delta + config.neighbor_noise * rng_chg.normal());
      change[static_cast<size_t>(j)] = c;
      nbr_sum += c;
    }
    for (int r = 0; r < k; ++r) {
      if (r == focus || std::find(nbr.begin(), nbr.end(), r) != nbr.end()) continue;
      change[static_cast<size_t>(r)] = config.background_noise * rng_chg.normal();
    }

    const double stat = config.focus_weight * delta +
                        (nbr.empty() ? 0.0 : config.neighbor_weight * nbr_sum / static_cast<double>(nbr.size()));
    std::uint8_t label;
    if (is_no_change) {
      for (auto& c : change) c *= config.no_change_scale;
      label = 2;
    } else {
      label = stat > 0.0 ? 1 : 0;
    }

    sev2 = sev;
    for (int r = 0; r < k; ++r)
      sev2[static_cast<size_t>(r) * static_cast<size_t>(M) + static_cast<size_t>(m)] += change[static_cast<size_t>(r)];

    // features: shared projection of severities plus gaussian noise
    auto project_region = [&](const std::vector<double>& s, int r, std::vector<float>& out, size_t off) {
      for (Index f = 0; f < d; ++f) {
        double acc = 0.0;
        for (int mm = 0; mm < M; ++mm)
          acc += Pr[static_cast<size_t>(f) * static_cast<size_t>(M) + static_cast<size_t>(mm)] *
                 s[static_cast<size_t>(r) * static_cast<size_t>(M) + static_cast<size_t>(mm)];
        out[off + static_cast<size_t>(f)] =
            static_cast<float>(acc + config.noise_sigma * rng_noise.normal());
      }
    };
    auto project_global = [&](const std::vector<double>& s, std::vector<float>& out) {
      std::vector<double> total(static_cast<size_t>(M), 0.0);
      for (int r = 0; r < k; ++r)
        for (int mm = 0; mm < M; ++mm)
          total[static_cast<size_t>(mm)] += s[static_cast<size_t>(r) * static_cast<size_t>(M) + static_cast<size_t>(mm)];
      for (Index f = 0; f < d; ++f) {
        double acc = 0.0;
        for (int mm = 0; mm < M; ++mm)
          acc += Pg[static_cast<size_t>(f) * static_cast<size_t>(M) + static_cast<size_t>(mm)] * total[static_cast<size_t>(mm)];
        out[static_cast<size_t>(f)] = static_cast<float>(acc + config.noise_sigma * rng_noise.normal());
      }
    };

    model::ComparisonSample& sample = ds.samples[static_cast<size_t>(i)];
    sample.pathology = static_cast<std::uint8_t>(m);
    sample.label = label;
    sample.focus = static_cast<std::uint8_t>(focus);
    sample.R.resize(static_cast<size_t>(k) * static_cast<size_t>(d));
    sample.Rp.resize(static_cast<size_t>(k) * static_cast<size_t>(d));
    sample.Q.resize(static_cast<size_t>(d));
    sample.Qp.resize(static_cast<size_t>(d));
    for (int r = 0; r < k; ++r) {
      project_region(sev, r, sample.R, static_cast<size_t>(r) * static_cast<size_t>(d));
      project_region(sev2, r, sample.Rp, static_cast<size_t>(r) * static_cast<size_t>(d));
    }
    project_global(sev, sample.Q);
    project_global(sev2, sample.Qp);

    float* sv = ds.severities.data() + static_cast<size_t>(2 * i) * sev_stride;
    for (size_t j = 0; j < sev_stride; ++j) sv[j] = static_cast<float>(sev[j]);
    for (size_t j = 0; j < sev_stride; ++j) sv[sev_stride + j] = static_cast<float>(sev2[j]);
  }

  // splits: seeded shuffle of pair ids, then contiguous cuts
  std::vector<std::int32_t> ids(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) ids[static_cast<size_t>(i)] = i;
  StreamRng rng_split(config.seed, rngstream::kSplit);
  for (int i = n - 1; i > 0; --i)
    std::swap(ids[static_cast<size_t>(i)], ids[rng_split.below(static_cast<std::uint64_t>(i) + 1)]);
  const int n_train = static_cast<int>(std::llround(config.split_fractions[0] * n));
  const int n_val = static_cast<int>(std::llround(config.split_fractions[1] * n));
  ds.train_ids.assign(ids.begin(), ids.begin() + n_train);
  ds.val_ids.assign(ids.begin() + n_train, ids.begin() + n_train + n_val);
  ds.test_ids.assign(ids.begin() + n_train + n_val, ids.end());
  return ds;
}

graph::RegionLabelIndex label_index(const Dataset& ds) {
  auto idx = graph::RegionLabelIndex::empty_index(ds.config.k, ds.config.M);
  for (std::int32_t pair : ds.train_ids) {
    for (int img : {2 * pair, 2 * pair + 1}) {
      for (int r = 0; r < ds.config.k; ++r)
        for (int m = 0; m < ds.config.M; ++m)
          if (ds.flag(img, r, m)) idx.add(r, m, img);
    }
  }
  idx.finalize();
  return idx;
}

// ---------------------------------------------------------------------------
// latent oracles

namespace {
double latent_stat(const Dataset& ds, int pair, const std::vector<std::vector<int>>& nbr) {
  const int k = ds.config.k, M = ds.config.M;
  const auto& s = ds.samples[static_cast<size_t>(pair)];
  auto prior = ds.image_severities(2 * pair);
  auto current = ds.image_severities(2 * pair + 1);
  auto change = [&](int r) {
    const size_t at = static_cast<size_t>(r) * static_cast<size_t>(M) + s.pathology;
    return static_cast<double>(current[at]) - static_cast<double>(prior[at]);
  };
  const auto& nb = nbr[s.focus];
  double nsum = 0.0;
  for (int j : nb) nsum += change(j);
  (void)k;
  return ds.config.focus_weight * change(s.focus) +
         (nb.empty() ? 0.0 : ds.config.neighbor_weight * nsum / static_cast<double>(nb.size()));
}

double focus_stat(const Dataset& ds, int pair) {
  const auto& s = ds.samples[static_cast<size_t>(pair)];
  const size_t at = static_cast<size_t>(s.focus) * static_cast<size_t>(ds.config.M) + s.pathology;
  return static_cast<double>(ds.image_severities(2 * pair + 1)[at]) -
         static_cast<double>(ds.image_severities(2 * pair)[at]);
}
}  // namespace

double oracle_full_accuracy(const Dataset& ds, std::span<const std::int32_t> pair_ids) {
  if (pair_ids.empty()) fail(ErrorKind::degenerate, "oracle: empty id list");
  const auto nbr = region_neighbors(ds.config.k);
  std::int64_t correct = 0;
  for (auto id : pair_ids)
    correct += (latent_stat(ds, id, nbr) > 0.0 ? 1 : 0) == ds.samples[static_cast<size_t>(id)].label;
  return static_cast<double>(correct) / static_cast<double>(pair_ids.size());
}

double oracle_focus_accuracy(const Dataset& ds, std::span<const std::int32_t> pair_ids) {
  if (pair_ids.empty()) fail(ErrorKind::degenerate, "oracle: empty id list");
  std::int64_t correct = 0;
  for (auto id : pair_ids)
    correct += (focus_stat(ds, id) > 0.0 ? 1 : 0) == ds.samples[static_cast<size_t>(id)].label;
  return static_cast<double>(correct) / static_cast<double>(pair_ids.size());
}

double oracle_agreement(const Dataset& ds, std::span<const std::int32_t> pair_ids) {
  if (pair_ids.empty()) fail(ErrorKind::degenerate, "oracle: empty id list");
  const auto nbr = region_neighbors(ds.config.k);
  std::int64_t agree = 0;
  for (auto id : pair_ids)
    agree += (latent_stat(ds, id, nbr) > 0.0) == (focus_stat(ds, id) > 0.0);
  return static_cast<double>(agree) / static_cast<double>(pair_ids.size());
}

// ---------------------------------------------------------------------------
// file format

namespace {
constexpr int kFormatVersion = 1;

json config_to_json_obj(const SynthConfig& c) {
  json j;
  j["n_pairs"] = c.n_pairs;
  j["k"] = c.k;
  j["d"] = c.d;
  j["M"] = c.M;
  j["noise_sigma"] = c.noise_sigma;
  j["cross_region_strength"] = c.cross_region_strength;
  j["no_change_fraction"] = c.no_change_fraction;
  j["pathology_mix"] = c.pathology_mix;
  j["seed"] = c.seed;
  j["split_fractions"] = c.split_fractions;
  j["focus_weight"] = c.focus_weight;
  j["neighbor_weight"] = c.neighbor_weight;
  j["neighbor_noise"] = c.neighbor_noise;
  j["background_noise"] = c.background_noise;
  j["no_change_scale"] = c.no_change_scale;
  j["region_activation_prob"] = c.region_activation_prob;
  j["background_activation_prob"] = c.background_activation_prob;
  return j;
}

SynthConfig config_from_json_obj(const json& j) {
  SynthConfig c;
  c.n_pairs = j.value("n_pairs", c.n_pairs);
  c.k = j.value("k", c.k);
  c.d = j.value("d", c.d);
  c.M = j.value("M", c.M);
  c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
  c.cross_region_strength = j.value("cross_region_strength", c.cross_region_strength);
  c.no_change_fraction = j.value("no_change_fraction", c.no_change_fraction);
  if (j.contains("pathology_mix")) c.pathology_mix = j["pathology_mix"].get<std::vector<double>>();
  c.seed = j.value("seed", c.seed);
  if (j.contains("split_fractions")) {
    auto v = j["split_fractions"].get<std::vector<double>>();
    if (v.size() != 3) fail(ErrorKind::parse, "split_fractions must have 3 entries");
    c.split_fractions = {v[0], v[1], v[2]};
  }
  c.focus_weight = j.value("focus_weight", c.focus_weight);
  c.neighbor_weight = j.value("neighbor_weight", c.neighbor_weight);
  c.neighbor_noise = j.value("neighbor_noise", c.neighbor_noise);
  c.background_noise = j.value("background_noise", c.background_noise);
  c.no_change_scale = j.value("no_change_scale", c.no_change_scale);
  c.region_activation_prob = j.value("region_activation_prob", c.region_activation_prob);
  c.background_activation_prob = j.value("background_activation_prob", c.background_activation_prob);
  return c;
}

void write_file(const std::string& path, const char* data, size_t size) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::io, "cannot open '" + path + "' for writing");
  f.write(data, static_cast<std::streamsize>(size));
  if (!f) fail(ErrorKind::io, "write failed for '" + path + "'");
}

std::vector<char> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) fail(ErrorKind::io, "cannot open '" + path + "'");
  const auto size = f.tellg();
  f.seekg(0);
  std::vector<char> buf(static_cast<size_t>(size));
  f.read(buf.data(), size);
  if (!f) fail(ErrorKind::io, "read failed for '" + path + "'");
  return buf;
}
}  // namespace

std::string config_to_json(const SynthConfig& c) { return config_to_json_obj(c).dump(2); }

SynthConfig config_from_json_text(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) fail(ErrorKind::parse, "invalid JSON config");
  return config_from_json_obj(j);
}

void write_dataset(const Dataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create directory '" + dir + "': " + ec.message());

  json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["config"] = config_to_json_obj(ds.config);
  manifest["n_pairs"] = ds.config.n_pairs;
  manifest["n_images"] = ds.n_images();
  manifest["counts"] = {{"train", ds.train_ids.size()},
                        {"val", ds.val_ids.size()},
                        {"test", ds.test_ids.size()}};
  manifest["splits"] = {{"train", ds.train_ids}, {"val", ds.val_ids}, {"test", ds.test_ids}};
  const std::string mtext = manifest.dump(2);
  write_file(dir + "/manifest.json", mtext.data(), mtext.size());

  // samples.bin: per sample u8 pathology, u8 label, u8 focus, then R, R', Q, Q' as f32 LE
  const size_t kd = static_cast<size_t>(ds.config.k) * static_cast<size_t>(ds.config.d);
  const size_t dd = static_cast<size_t>(ds.config.d);
  const size_t rec = 3 + sizeof(float) * (2 * kd + 2 * dd);
  std::vector<char> buf(rec * ds.samples.size());
  char* p = buf.data();
  for (const auto& s : ds.samples) {
    *p++ = static_cast<char>(s.pathology);
    *p++ = static_cast<char>(s.label);
    *p++ = static_cast<char>(s.focus);
    auto put = [&p](const std::vector<float>& v) {
      std::memcpy(p, v.data(), v.size() * sizeof(float));
      p += v.size() * sizeof(float);
    };
    put(s.R);
    put(s.Rp);
    put(s.Q);
    put(s.Qp);
  }
  write_file(dir + "/samples.bin", buf.data(), buf.size());

  write_file(dir + "/latents.bin", reinterpret_cast<const char*>(ds.severities.data()),
             ds.severities.size() * sizeof(float));
}

Dataset read_dataset(const std::string& dir) {
  const auto mbuf = read_file(dir + "/manifest.json");
  json manifest = json::parse(mbuf.begin(), mbuf.end(), nullptr, false);
  if (manifest.is_discarded()) fail(ErrorKind::parse, "malformed manifest.json in '" + dir + "'");
  const int version = manifest.value("format_version", -1);
  if (version != kFormatVersion)
    fail(ErrorKind::unsupported_version, "dataset format version " + std::to_string(version) +
                                             " unsupported (expected " + std::to_string(kFormatVersion) + ")");
  if (!manifest.contains("config") || !manifest.contains("splits"))
    fail(ErrorKind::parse, "manifest.json is missing required keys");

  Dataset ds;
  ds.config = config_from_json_obj(manifest["config"]);
  ds.train_ids = manifest["splits"]["train"].get<std::vector<std::int32_t>>();
  ds.val_ids = manifest["splits"]["val"].get<std::vector<std::int32_t>>();
  ds.test_ids = manifest["splits"]["test"].get<std::vector<std::int32_t>>();

  const size_t kd = static_cast<size_t>(ds.config.k) * static_cast<size_t>(ds.config.d);
  const size_t dd = static_cast<size_t>(ds.config.d);
  const size_t rec = 3 + sizeof(float) * (2 * kd + 2 * dd);
  const auto sbuf = read_file(dir + "/samples.bin");
  const size_t expected = rec * static_cast<size_t>(ds.config.n_pairs);
  if (sbuf.size() != expected)
    fail(ErrorKind::parse, "samples.bin has " + std::to_string(sbuf.size()) + " bytes, expected " +
                               std::to_string(expected) + " (record boundary at byte offset " +
                               std::to_string((sbuf.size() / rec) * rec) + ")");
  ds.samples.resize(static_cast<size_t>(ds.config.n_pairs));
  const char* p = sbuf.data();
  for (auto& s : ds.samples) {
    s.pathology = static_cast<std::uint8_t>(*p++);
    s.label = static_cast<std::uint8_t>(*p++);
    s.focus = static_cast<std::uint8_t>(*p++);
    auto take = [&p](std::vector<float>& v, size_t n) {
      v.resize(n);
      std::memcpy(v.data(), p, n * sizeof(float));
      p += n * sizeof(float);
    };
    take(s.R, kd);
    take(s.Rp, kd);
    take(s.Q, dd);
    take(s.Qp, dd);
  }

  const auto lbuf = read_file(dir + "/latents.bin");
  const size_t lexpected = static_cast<size_t>(ds.n_images()) * static_cast<size_t>(ds.config.k) *
                           static_cast<size_t>(ds.config.M) * sizeof(float);
  if (lbuf.size() != lexpected)
    fail(ErrorKind::parse, "latents.bin has " + std::to_string(lbuf.size()) + " bytes, expected " +
                               std::to_string(lexpected) + " (truncated at byte offset " +
                               std::to_string(lbuf.size()) + ")");
  ds.severities.resize(lexpected / sizeof(float));
  std::memcpy(ds.severities.data(), lbuf.data(), lbuf.size());
  return ds;
}

}  // namespace chexrel::synth
