#pragma once

// Task-vector filtering (DELLA-style row top-k, Breadcrumbs band, DARE),
// activation-informed masking and merging.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "crw/parallel.hpp"
#include "crw/random.hpp"
#include "crw/safetensors.hpp"

namespace crw {

enum class MergeMethod { DellaLinear, Breadcrumbs, DareLinear };

inline std::string_view to_string(MergeMethod m) {
  switch (m) {
    case MergeMethod::DellaLinear: return "della_linear";
    case MergeMethod::Breadcrumbs: return "breadcrumbs";
    case MergeMethod::DareLinear: return "dare_linear";
  }
  return "?";
}

inline MergeMethod parse_merge_method(std::string_view s) {
  if (s == "della_linear" || s == "della") return MergeMethod::DellaLinear;
  if (s == "breadcrumbs") return MergeMethod::Breadcrumbs;
  if (s == "dare_linear" || s == "dare") return MergeMethod::DareLinear;
  fail(ErrorCode::InvalidArgument, "unknown merge method '" + std::string(s) + "'");
}

struct AimConfig {
  std::string activations;  // archive path
  double quantile = 0.99;
};

struct MergeConfig {
  MergeMethod method = MergeMethod::DellaLinear;
  double rho = 0.15;
  double gamma = 0.0;
  double epsilon = 0.0;  // recorded only
  double weight = 1.0;
  std::uint64_t seed = kDefaultSeed;
  std::optional<AimConfig> aim;
  std::optional<Dtype> out_dtype;  // default: base dtype

  static MergeConfig defaults(MergeMethod m) {
    MergeConfig c;
    c.method = m;
    switch (m) {
      case MergeMethod::DellaLinear:
        c.rho = 0.15;
        c.epsilon = 0.02;
        break;
      case MergeMethod::Breadcrumbs:
        c.rho = 0.15;
        c.gamma = 0.02;
        break;
      case MergeMethod::DareLinear:
        c.rho = 0.5;
        break;
    }
    return c;
  }
};

inline json to_json(const MergeConfig& c) {
  json j = {{"method", to_string(c.method)}, {"rho", c.rho},       {"gamma", c.gamma},
            {"epsilon", c.epsilon},          {"weight", c.weight}, {"seed", c.seed}};
  if (c.aim) j["aim"] = {{"activations", c.aim->activations}, {"quantile", c.aim->quantile}};
  if (c.out_dtype) j["out_dtype"] = to_string(*c.out_dtype);
  return j;
}

inline void check_density(double rho) {
  if (!(rho > 0.0 && rho <= 1.0)) fail(ErrorCode::InvalidDensity, "density must be in (0, 1], got " + std::to_string(rho));
}

// ---------------------------------------------------------------------------
// Task vectors

inline Tensor tensor_difference(const Tensor& base, const Tensor& tuned, const std::string& name = {}) {
  if (base.shape != tuned.shape) fail(ErrorCode::ShapeMismatch, "shape differs for " + name);
  Tensor d;
  d.dtype = base.dtype;
  d.shape = base.shape;
  d.data.resize(base.data.size());
  for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] = tuned.data[i] - base.data[i];
  return d;
}

inline void check_same_names(const TensorArchive& a, const TensorArchive& b) {
  if (a.size() != b.size() || !std::equal(a.begin(), a.end(), b.begin(), [](const auto& x, const auto& y) { return x.first == y.first; })) {
    fail(ErrorCode::NameSetMismatch, "archives hold different tensor names");
  }
}

inline TensorArchive task_vector(const TensorArchive& base, const TensorArchive& tuned) {
  check_same_names(base, tuned);
  TensorArchive out;
  for (const auto& [name, b] : base) out.emplace(name, tensor_difference(b, tuned.at(name), name));
  return out;
}

// ---------------------------------------------------------------------------
// Filters

namespace detail {

/// Indices of `values[offset..offset+len)` ordered by magnitude descending,
/// ties by lower index.
inline std::vector<std::size_t> magnitude_order(const std::vector<double>& values, std::size_t offset, std::size_t len) {
  std::vector<std::size_t> idx(len);
  std::iota(idx.begin(), idx.end(), offset);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return std::fabs(values[a]) > std::fabs(values[b]); });
  return idx;
}

inline std::size_t row_length(const Tensor& t) { return t.shape.empty() ? 1 : static_cast<std::size_t>(t.shape.back()); }

}  // namespace detail

/// Keeps the top max(1, round(rho * row_len)) entries of every row by
/// magnitude (rows run along the last dimension; 1-D is one row).
inline Tensor della_filter(const Tensor& delta, double rho) {
  check_density(rho);
  Tensor out = delta;
  const std::size_t len = detail::row_length(delta);
  if (len == 0) return out;
  const std::size_t keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(rho * static_cast<double>(len))));
  std::fill(out.data.begin(), out.data.end(), 0.0);
  for (std::size_t off = 0; off < delta.data.size(); off += len) {
    const auto order = detail::magnitude_order(delta.data, off, len);
    for (std::size_t i = 0; i < std::min(keep, len); ++i) out.data[order[i]] = delta.data[order[i]];
  }
  return out;
}

struct BandCounts {
  std::size_t top = 0;   // zeroed outliers
  std::size_t keep = 0;  // retained
  std::size_t bottom = 0;
};

inline BandCounts breadcrumbs_counts(std::size_t n, double rho, double gamma) {
  check_density(rho);
  if (gamma < 0.0 || gamma >= 1.0 || rho + gamma > 1.0 + 1e-12) {
    fail(ErrorCode::InvalidBand, "need 0 <= gamma < 1 and rho + gamma <= 1");
  }
  BandCounts c;
  const double nd = static_cast<double>(n);
  c.top = std::min(n, static_cast<std::size_t>(std::llround(gamma * nd)));
  c.keep = std::min(n - c.top, static_cast<std::size_t>(std::llround(rho * nd)));
  c.bottom = n - c.top - c.keep;
  return c;
}

/// Over the flattened tensor: zero the top gamma fraction by magnitude and
/// the bottom 1 - rho - gamma; the middle band (fraction rho) survives.
inline Tensor breadcrumbs_filter(const Tensor& delta, double rho, double gamma) {
  const auto c = breadcrumbs_counts(delta.data.size(), rho, gamma);
  Tensor out = delta;
  std::fill(out.data.begin(), out.data.end(), 0.0);
  const auto order = detail::magnitude_order(delta.data, 0, delta.data.size());
  for (std::size_t i = c.top; i < c.top + c.keep; ++i) out.data[order[i]] = delta.data[order[i]];
  return out;
}

/// Keeps each entry with probability rho, rescaled by 1/rho.
inline Tensor dare_filter(const Tensor& delta, double rho, std::uint64_t seed) {
  check_density(rho);
  Tensor out = delta;
  if (rho == 1.0) return out;
  Rng rng(seed);
  for (auto& v : out.data) v = rng.bernoulli(rho) ? v / rho : 0.0;
  return out;
}

/// Per-tensor DARE stream, independent of tensor order.
inline std::uint64_t dare_seed(std::uint64_t seed, std::string_view name) { return derive_seed(seed, fnv1a64(name)); }

/// Zeros Δ where the activation magnitude ranks in the top
/// round((1 - quantile) * m) of the activation tensor (m entries, ties by
/// lower index). The activation is either per-weight (same shape) or
/// per-row (one value per leading index), broadcast along each row.
inline Tensor aim_mask(const Tensor& delta, const Tensor& activation, double quantile, const std::string& name = {}) {
  if (quantile < 0.0 || quantile > 1.0) fail(ErrorCode::InvalidArgument, "AIM quantile must be in [0, 1]");
  const std::size_t m = activation.data.size();
  const std::size_t n = delta.data.size();
  std::size_t row = 0;
  if (m == n && (activation.shape == delta.shape || activation.shape.size() <= 1)) {
    row = 1;
  } else if (m > 0 && n % m == 0 && !delta.shape.empty() && static_cast<std::size_t>(delta.shape.front()) == m) {
    row = n / m;
  } else {
    fail(ErrorCode::ShapeMismatch, "activation for " + name + " is neither per-weight nor per-row");
  }
  const std::size_t masked = std::min(m, static_cast<std::size_t>(std::llround((1.0 - quantile) * static_cast<double>(m))));
  Tensor out = delta;
  const auto order = detail::magnitude_order(activation.data, 0, m);
  for (std::size_t i = 0; i < masked; ++i) {
    const std::size_t a = order[i];
    std::fill(out.data.begin() + static_cast<std::ptrdiff_t>(a * row),
              out.data.begin() + static_cast<std::ptrdiff_t>((a + 1) * row), 0.0);
  }
  return out;
}

inline Tensor apply_filter(const Tensor& delta, const MergeConfig& cfg, const std::string& name) {
  switch (cfg.method) {
    case MergeMethod::DellaLinear: return della_filter(delta, cfg.rho);
    case MergeMethod::Breadcrumbs: return breadcrumbs_filter(delta, cfg.rho, cfg.gamma);
    case MergeMethod::DareLinear: return dare_filter(delta, cfg.rho, dare_seed(cfg.seed, name));
  }
  return delta;
}

/// base + weight * delta, in double; stored in the output dtype.
inline Tensor merge_tensor(const Tensor& base, const Tensor& delta, double weight, std::optional<Dtype> out_dtype = {},
                           const std::string& name = {}) {
  if (base.shape != delta.shape) fail(ErrorCode::ShapeMismatch, "shape differs for " + name);
  Tensor out;
  out.dtype = out_dtype.value_or(base.dtype);
  out.shape = base.shape;
  out.data.resize(base.data.size());
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = base.data[i] + weight * delta.data[i];
  return out;
}

inline TensorArchive merge(const TensorArchive& base, const TensorArchive& delta, double weight,
                           std::optional<Dtype> out_dtype = {}) {
  check_same_names(base, delta);
  TensorArchive out;
  for (const auto& [name, b] : base) out.emplace(name, merge_tensor(b, delta.at(name), weight, out_dtype, name));
  return out;
}

// ---------------------------------------------------------------------------
// File pipeline

struct MergeSummary {
  std::size_t tensors = 0;
  std::size_t entries = 0;
  std::size_t retained = 0;  // nonzero entries of the final Δ
};

inline json to_json(const MergeSummary& s) {
  return json{{"tensors", s.tensors},
              {"entries", s.entries},
              {"retained", s.retained},
              {"retained_fraction", s.entries ? static_cast<double>(s.retained) / static_cast<double>(s.entries) : 0.0}};
}

/// Streams base/tuned archives tensor by tensor into `out`.
inline MergeSummary merge_files(const std::filesystem::path& base_path, const std::filesystem::path& tuned_path,
                                const std::filesystem::path& out_path, const MergeConfig& cfg, std::size_t workers) {
  ArchiveReader base(base_path), tuned(tuned_path);
  std::optional<ArchiveReader> act;
  if (cfg.aim) act.emplace(cfg.aim->activations);
  const auto& infos = base.tensors();
  if (infos.size() != tuned.tensors().size()) fail(ErrorCode::NameSetMismatch, "archives hold different tensor names");
  std::map<std::string, std::pair<Dtype, std::vector<std::int64_t>>> entries;
  std::vector<std::string> names;
  for (const auto& [name, inf] : infos) {
    if (!tuned.tensors().count(name)) fail(ErrorCode::NameSetMismatch, "tuned archive lacks " + name);
    if (tuned.info(name).shape != inf.shape) fail(ErrorCode::ShapeMismatch, "shape differs for " + name);
    if (act && !act->tensors().count(name)) fail(ErrorCode::MissingActivationTensor, name);
    entries[name] = {cfg.out_dtype.value_or(inf.dtype), inf.shape};
    names.push_back(name);
  }
  json meta = {{"merge", to_json(cfg).dump()}};
  ArchiveWriter writer(out_path, plan_layout(entries, meta));
  std::vector<std::size_t> retained(names.size(), 0), sizes(names.size(), 0);
  parallel_for(names.size(), workers, [&](std::size_t i) {
    const auto& name = names[i];
    const Tensor b = base.read(name);
    Tensor d = apply_filter(tensor_difference(b, tuned.read(name), name), cfg, name);
    if (act) d = aim_mask(d, act->read(name), cfg.aim->quantile, name);
    retained[i] = static_cast<std::size_t>(std::count_if(d.data.begin(), d.data.end(), [](double v) { return v != 0.0; }));
    sizes[i] = d.data.size();
    writer.write(name, merge_tensor(b, d, cfg.weight, cfg.out_dtype, name).data);
  });
  writer.commit();
  MergeSummary s;
  s.tensors = names.size();
  s.entries = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  s.retained = std::accumulate(retained.begin(), retained.end(), std::size_t{0});
  return s;
}

}  // namespace crw
