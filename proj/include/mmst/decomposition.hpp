#pragma once

// Empirical mode decomposition (EMD) and its complete ensemble variant with
// adaptive noise (CEEMDAN), plus channelization of a flow window into
// [IMF_1 .. IMF_m, residual, original] channels.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mmst/error.hpp"
#include "mmst/flow_tensor.hpp"

namespace mmst {

using Series = std::vector<double>;

struct Extrema {
  std::vector<std::size_t> maxima;
  std::vector<std::size_t> minima;

  std::size_t count() const { return maxima.size() + minima.size(); }
  bool oscillates() const { return !maxima.empty() && !minima.empty(); }
};

// Interior local extrema. A flat run that sits above (below) both
// neighbouring runs counts once, at its middle sample. Endpoints never count.
inline Extrema find_extrema(std::span<const double> x) {
  struct Run {
    std::size_t first, last;
    double value;
  };
  std::vector<Run> runs;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!runs.empty() && x[i] == runs.back().value) {
      runs.back().last = i;
    } else {
      runs.push_back({i, i, x[i]});
    }
  }
  Extrema e;
  for (std::size_t k = 1; k + 1 < runs.size(); ++k) {
    const auto& r = runs[k];
    const std::size_t mid = (r.first + r.last) / 2;
    if (r.value > runs[k - 1].value && r.value > runs[k + 1].value) {
      e.maxima.push_back(mid);
    } else if (r.value < runs[k - 1].value && r.value < runs[k + 1].value) {
      e.minima.push_back(mid);
    }
  }
  return e;
}

inline std::size_t count_zero_crossings(std::span<const double> x) {
  std::size_t n = 0;
  int last = 0;
  for (double v : x) {
    const int s = v > 0.0 ? 1 : (v < 0.0 ? -1 : 0);
    if (s == 0) continue;
    if (last != 0 && s != last) ++n;
    last = s;
  }
  return n;
}

// Extrema and zero-crossing counts differ by at most one.
inline bool satisfies_imf_property(std::span<const double> x) {
  const auto e = static_cast<long>(find_extrema(x).count());
  const auto z = static_cast<long>(count_zero_crossings(x));
  return std::labs(e - z) <= 1;
}

// Natural cubic spline through (knots_x, knots_y), evaluated at 0..length-1.
// knots_x must be strictly increasing.
inline Series natural_cubic_spline(std::span<const double> kx, std::span<const double> ky,
                                   std::size_t length) {
  const std::size_t n = kx.size();
  Series out(length);
  if (n == 0) return out;
  if (n == 1) {
    std::fill(out.begin(), out.end(), ky[0]);
    return out;
  }
  std::vector<double> h(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) h[i] = kx[i + 1] - kx[i];
  // Second derivatives; natural boundary M_0 = M_{n-1} = 0.
  std::vector<double> m(n, 0.0);
  if (n > 2) {
    const std::size_t k = n - 2;
    std::vector<double> diag(k), upper(k), rhs(k);
    for (std::size_t i = 1; i + 1 < n; ++i) {
      diag[i - 1] = 2.0 * (h[i - 1] + h[i]);
      upper[i - 1] = h[i];
      rhs[i - 1] = 6.0 * ((ky[i + 1] - ky[i]) / h[i] - (ky[i] - ky[i - 1]) / h[i - 1]);
    }
    // Thomas algorithm; sub-diagonal entry of row r is h[r].
    for (std::size_t r = 1; r < k; ++r) {
      const double w = h[r] / diag[r - 1];
      diag[r] -= w * upper[r - 1];
      rhs[r] -= w * rhs[r - 1];
    }
    m[k] = rhs[k - 1] / diag[k - 1];
    for (std::size_t r = k - 1; r-- > 0;) {
      m[r + 1] = (rhs[r] - upper[r] * m[r + 2]) / diag[r];
    }
  }
  std::size_t seg = 0;
  for (std::size_t t = 0; t < length; ++t) {
    const double x = static_cast<double>(t);
    while (seg + 2 < n && x > kx[seg + 1]) ++seg;
    const double hi = h[seg];
    const double a = kx[seg + 1] - x;
    const double b = x - kx[seg];
    out[t] = m[seg] * a * a * a / (6.0 * hi) + m[seg + 1] * b * b * b / (6.0 * hi) +
             (ky[seg] / hi - m[seg] * hi / 6.0) * a +
             (ky[seg + 1] / hi - m[seg + 1] * hi / 6.0) * b;
  }
  return out;
}

// Envelope through the given extrema, extended past both ends by mirroring
// the two nearest extrema's positions about the end samples. The mirrored
// knots take values on the line through those two extrema, so a trend
// carries on past the boundary instead of folding back (a single extremum
// gives a flat extension). An endpoint that lies beyond the extension (above
// it for the upper envelope) becomes a knot itself so the envelope never cuts
// the signal there.
inline Series envelope(std::span<const double> x, const std::vector<std::size_t>& idx,
                       bool upper) {
  const double last = static_cast<double>(x.size() - 1);
  auto beyond = [upper](double a, double b) { return upper ? a > b : a < b; };
  const std::size_t mirror = std::min<std::size_t>(2, idx.size());
  // line through the two extrema nearest one end, as value at position p
  auto line = [&](std::size_t i0, std::size_t i1) {
    const double p0 = static_cast<double>(idx[i0]), v0 = x[idx[i0]];
    if (i0 == i1) return std::function<double(double)>([v0](double) { return v0; });
    const double p1 = static_cast<double>(idx[i1]), v1 = x[idx[i1]];
    const double slope = (v1 - v0) / (p1 - p0);
    return std::function<double(double)>([=](double p) { return v0 + slope * (p - p0); });
  };
  const auto left = line(0, mirror - 1);
  const auto right = line(idx.size() - 1, idx.size() - mirror);
  std::vector<double> kx, ky;
  for (std::size_t i = mirror; i-- > 0;) {
    const double p = -static_cast<double>(idx[i]);
    kx.push_back(p);
    ky.push_back(left(p));
  }
  if (beyond(x.front(), left(0.0))) {
    kx.push_back(0.0);
    ky.push_back(x.front());
  }
  for (std::size_t i : idx) {
    kx.push_back(static_cast<double>(i));
    ky.push_back(x[i]);
  }
  if (beyond(x.back(), right(last))) {
    kx.push_back(last);
    ky.push_back(x.back());
  }
  for (std::size_t i = 0; i < mirror; ++i) {
    const double p = 2.0 * last - static_cast<double>(idx[idx.size() - 1 - i]);
    kx.push_back(p);
    ky.push_back(right(p));
  }
  return natural_cubic_spline(kx, ky, x.size());
}

struct SiftParams {
  double sd_threshold = 0.2;  // Cauchy-type stop between successive iterates
  int max_iterations = 50;
};

// Mean of the upper and lower envelopes; requires x.oscillates().
inline Series envelope_mean(std::span<const double> x, const Extrema& ext) {
  const Series up = envelope(x, ext.maxima, true);
  const Series lo = envelope(x, ext.minima, false);
  Series mean(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) mean[t] = 0.5 * (up[t] + lo[t]);
  return mean;
}

// One IMF candidate, or nullopt ("monotone remainder") when the input has no
// maximum/minimum pair to build envelopes from.
inline std::optional<Series> sift(std::span<const double> x, const SiftParams& params = {}) {
  if (x.size() < 4) return std::nullopt;
  Extrema ext = find_extrema(x);
  if (!ext.oscillates()) return std::nullopt;
  Series h(x.begin(), x.end());
  for (int it = 0; it < params.max_iterations; ++it) {
    const Series mean = envelope_mean(h, ext);
    double num = 0.0, den = 0.0;
    for (std::size_t t = 0; t < h.size(); ++t) {
      num += mean[t] * mean[t];
      den += h[t] * h[t];
      h[t] -= mean[t];
    }
    if (den == 0.0) break;
    ext = find_extrema(h);
    if (!ext.oscillates()) break;
    if (num / den < params.sd_threshold && satisfies_imf_property(h)) break;
  }
  return h;
}

struct DecompositionResult {
  std::vector<Series> imfs;
  Series residual;
  Series original;

  std::size_t mode_count() const { return imfs.size(); }

  Series reconstruct() const {
    Series s = residual;
    for (const auto& imf : imfs) {
      for (std::size_t t = 0; t < s.size(); ++t) s[t] += imf[t];
    }
    return s;
  }

  // ||original - (sum IMFs + residual)|| / ||original||; absolute error when
  // the original is all zeros.
  double reconstruction_error() const {
    const Series r = reconstruct();
    double num = 0.0, den = 0.0;
    for (std::size_t t = 0; t < r.size(); ++t) {
      num += (original[t] - r[t]) * (original[t] - r[t]);
      den += original[t] * original[t];
    }
    return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
  }
};

inline DecompositionResult emd(std::span<const double> x, std::size_t max_imfs,
                               const SiftParams& params = {}) {
  DecompositionResult out;
  out.original.assign(x.begin(), x.end());
  out.residual = out.original;
  while (out.imfs.size() < max_imfs) {
    auto imf = sift(out.residual, params);
    if (!imf) break;
    for (std::size_t t = 0; t < imf->size(); ++t) out.residual[t] -= (*imf)[t];
    out.imfs.push_back(std::move(*imf));
  }
  return out;
}

struct CeemdanConfig {
  std::size_t ensemble_size = 50;
  double noise_ratio = 0.2;  // noise std as a fraction of the series std
  std::size_t max_imfs = 12;
  SiftParams sift;
  std::uint64_t seed = 0;

  void validate() const {
    if (ensemble_size < 1) throw ConfigError("ceemdan: ensemble size must be >= 1");
    if (!(noise_ratio > 0.0)) throw ConfigError("ceemdan: noise ratio must be > 0");
    if (max_imfs < 1) throw ConfigError("ceemdan: max_imfs must be >= 1");
  }

  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](std::uint64_t v) {
      for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xFFu;
        h *= 1099511628211ULL;
      }
    };
    mix(ensemble_size);
    mix(std::bit_cast<std::uint64_t>(noise_ratio));
    mix(max_imfs);
    mix(std::bit_cast<std::uint64_t>(sift.sd_threshold));
    mix(static_cast<std::uint64_t>(sift.max_iterations));
    mix(seed);
    return h;
  }
};

inline double standard_deviation(std::span<const double> x) {
  if (x.empty()) return 0.0;
  const double mu = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  double s = 0.0;
  for (double v : x) s += (v - mu) * (v - mu);
  return std::sqrt(s / static_cast<double>(x.size()));
}

// Stage 1 averages the first EMD mode of x + eps*w_i over the I noise
// realizations; stage k > 1 averages the first mode of r_{k-1} + eps*E_{k-1}(w_i)
// where E_j is the j-th EMD mode of the noise. Each stage subtracts its mode
// from the running residual, so reconstruction is exact up to rounding.
inline DecompositionResult ceemdan(std::span<const double> x, const CeemdanConfig& cfg) {
  cfg.validate();
  DecompositionResult out;
  out.original.assign(x.begin(), x.end());
  out.residual = out.original;
  const std::size_t len = x.size();
  if (len < 4 || !find_extrema(x).oscillates()) return out;
  const double eps = cfg.noise_ratio * standard_deviation(x);

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Series> noise(cfg.ensemble_size, Series(len));
  for (auto& w : noise) {
    for (auto& v : w) v = gauss(rng);
  }
  std::vector<std::vector<Series>> noise_modes;
  noise_modes.reserve(cfg.ensemble_size);
  for (const auto& w : noise) {
    noise_modes.push_back(emd(w, cfg.max_imfs > 1 ? cfg.max_imfs - 1 : 0, cfg.sift).imfs);
  }

  Series probe(len);
  while (out.imfs.size() < cfg.max_imfs) {
    const std::size_t stage = out.imfs.size();
    if (!find_extrema(out.residual).oscillates()) break;
    Series mode(len, 0.0);
    for (std::size_t i = 0; i < cfg.ensemble_size; ++i) {
      const Series* perturb = nullptr;
      if (stage == 0) {
        perturb = &noise[i];
      } else if (stage - 1 < noise_modes[i].size()) {
        perturb = &noise_modes[i][stage - 1];
      }
      for (std::size_t t = 0; t < len; ++t) {
        probe[t] = out.residual[t] + (perturb ? eps * (*perturb)[t] : 0.0);
      }
      if (auto first = sift(probe, cfg.sift)) {
        for (std::size_t t = 0; t < len; ++t) mode[t] += (*first)[t];
      }
    }
    const double inv = 1.0 / static_cast<double>(cfg.ensemble_size);
    for (std::size_t t = 0; t < len; ++t) {
      mode[t] *= inv;
      out.residual[t] -= mode[t];
    }
    out.imfs.push_back(std::move(mode));
  }
  return out;
}

// Per-node seed derived from a master seed so results do not depend on the
// order in which nodes are processed.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0) {
  auto splitmix = [](std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  };
  return splitmix(splitmix(splitmix(master) ^ a) ^ b);
}

// [P x N x 1] -> [P x N x (m + 2)], channel layout per node:
// IMF_1 .. IMF_u, zeros up to m, residual, original.
inline FlowTensor decompose_channelize(const FlowTensor& x, const CeemdanConfig& cfg,
                                       std::uint64_t window_tag = 0) {
  cfg.validate();
  const std::size_t m = cfg.max_imfs;
  FlowTensor out(x.time(), x.nodes(), m + 2);
  for (std::size_t n = 0; n < x.nodes(); ++n) {
    const Series s = x.series(n, 0);
    CeemdanConfig node_cfg = cfg;
    node_cfg.seed = derive_seed(cfg.seed, n, window_tag);
    const DecompositionResult d = ceemdan(s, node_cfg);
    for (std::size_t k = 0; k < d.imfs.size(); ++k) out.set_series(n, k, d.imfs[k]);
    out.set_series(n, m, d.residual);
    out.set_series(n, m + 1, s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// On-disk cache: one record per node, little-endian.
//   magic "MMSTDC01" | u32 name_len | name bytes | u32 u | u32 m | u64 T |
//   u64 cfg_hash | u*T f64 IMFs | T f64 residual

struct CachedNode {
  std::string name;
  std::uint32_t max_imfs = 0;
  std::uint64_t cfg_hash = 0;
  DecompositionResult result;  // original left empty
};

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
  os.write(b, 8);
}
inline void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
  os.write(b, 4);
}
inline std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw DataError("decomposition cache truncated");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}
inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw DataError("decomposition cache truncated");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

}  // namespace detail

inline constexpr char kCacheMagic[8] = {'M', 'M', 'S', 'T', 'D', 'C', '0', '1'};

inline void write_decomposition_cache(const std::string& path,
                                      const std::vector<CachedNode>& nodes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write decomposition cache: " + path);
  for (const auto& n : nodes) {
    os.write(kCacheMagic, 8);
    detail::put_u32(os, static_cast<std::uint32_t>(n.name.size()));
    os.write(n.name.data(), static_cast<std::streamsize>(n.name.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(n.result.imfs.size()));
    detail::put_u32(os, n.max_imfs);
    detail::put_u64(os, n.result.residual.size());
    detail::put_u64(os, n.cfg_hash);
    for (const auto& imf : n.result.imfs) {
      for (double v : imf) detail::put_u64(os, std::bit_cast<std::uint64_t>(v));
    }
    for (double v : n.result.residual) detail::put_u64(os, std::bit_cast<std::uint64_t>(v));
  }
}

inline std::vector<CachedNode> read_decomposition_cache(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open decomposition cache: " + path);
  std::vector<CachedNode> nodes;
  char magic[8];
  while (is.read(magic, 8)) {
    if (!std::equal(magic, magic + 8, kCacheMagic)) {
      throw DataError("decomposition cache: bad record magic in " + path);
    }
    CachedNode n;
    const std::uint32_t name_len = detail::get_u32(is);
    n.name.resize(name_len);
    if (!is.read(n.name.data(), name_len)) throw DataError("decomposition cache truncated");
    const std::uint32_t u = detail::get_u32(is);
    n.max_imfs = detail::get_u32(is);
    const std::uint64_t len = detail::get_u64(is);
    n.cfg_hash = detail::get_u64(is);
    n.result.imfs.assign(u, Series(len));
    for (auto& imf : n.result.imfs) {
      for (auto& v : imf) v = std::bit_cast<double>(detail::get_u64(is));
    }
    n.result.residual.resize(len);
    for (auto& v : n.result.residual) v = std::bit_cast<double>(detail::get_u64(is));
    nodes.push_back(std::move(n));
  }
  return nodes;
}

// Cached records if the file exists and every record matches the config
// hash, node names, and length; nullopt means the caller must recompute.
inline std::optional<std::vector<CachedNode>> load_valid_cache(
    const std::string& path, const CeemdanConfig& cfg,
    const std::vector<std::string>& node_names, std::size_t length) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) return std::nullopt;
  probe.close();
  auto nodes = read_decomposition_cache(path);
  if (nodes.size() != node_names.size()) return std::nullopt;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].cfg_hash != cfg.hash() || nodes[i].name != node_names[i] ||
        nodes[i].result.residual.size() != length || nodes[i].max_imfs != cfg.max_imfs) {
      return std::nullopt;
    }
  }
  return nodes;
}

}  // namespace mmst
