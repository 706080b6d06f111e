#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "afcomb/data_model.hpp"
#include "afcomb/errors.hpp"
#include "afcomb/parallel.hpp"
#include "afcomb/perm_null.hpp"
#include "afcomb/stats.hpp"

namespace afcomb {

// A weight vector over K phenotypes, encoded as a bit mask in [1, 2^K - 1].
using Mask = std::uint32_t;

enum class Method { afp, afz, fisher, minp };

inline std::string method_name(Method m) {
  switch (m) {
    case Method::afp: return "AFp";
    case Method::afz: return "AFz";
    case Method::fisher: return "Fisher";
    case Method::minp: return "minP";
  }
  return "?";
}

inline std::string mask_bits(Mask w, int K) {
  std::string s(static_cast<std::size_t>(K), '0');
  for (int k = 0; k < K; ++k)
    if (w & (Mask{1} << k)) s[static_cast<std::size_t>(k)] = '1';
  return s;
}

// All 2^K - 1 nonzero masks in reflected Gray order, so consecutive masks
// differ in exactly one bit and the weighted statistic can be updated
// incrementally.
inline std::vector<Mask> enumerate_weights(int K) {
  if (K < 1 || K > kMaxPhenotypes)
    throw TooManyPhenotypes("K=" + std::to_string(K) + " outside [1, " +
                            std::to_string(kMaxPhenotypes) + "]");
  const Mask count = (Mask{1} << K) - 1;
  std::vector<Mask> out;
  out.reserve(count);
  for (Mask i = 1; i <= count; ++i) out.push_back(i ^ (i >> 1));
  return out;
}

// U(w) = sum of the selected -ln p entries.
inline double weighted_stat(const std::vector<double>& neglogp_row, Mask w) {
  double u = 0.0;
  for (std::size_t k = 0; k < neglogp_row.size(); ++k)
    if (w & (Mask{1} << k)) u += neglogp_row[k];
  return u;
}

// -ln p in 2^-32 fixed point. Integer accumulation makes Gray-code
// incremental updates exactly equal to recomputing the sum from scratch,
// independent of summation order and platform. p >= 1e-300 and K <= 15 keep
// every partial sum below 2^53, so conversions back to double are exact.
constexpr double kNeglogFixedScale = 4294967296.0;  // 2^32

inline std::int64_t quantize_neglog(double p) {
  const double nl = -std::log(p);
  return static_cast<std::int64_t>(std::llround(nl * kNeglogFixedScale));
}

struct AdaptiveResult {
  double statistic = 0.0;   // AFp: min p_U in [0,1]; AFz: max standardized U
  double p_raw = 1.0;       // permutation p-value, may be exactly 0
  double p_floored = 1.0;   // p_raw, or 1/(B*p + 1) when p_raw == 0
  bool floor_flag = false;  // p_raw was 0 before flooring
  Mask weight_mask = 0;     // selected weight vector
  double u_at_weight = 0.0; // U at the selected weights
};

struct AfOptions {
  // when > 0, emit a resolution warning if the target is below 1/(B*p)
  double significance_target = 0.0;
  int threads = 0;
};

struct AfOutput {
  std::vector<AdaptiveResult> genes;
  std::vector<std::string> warnings;
};

struct AfBoth {
  AfOutput afp;
  AfOutput afz;
};

namespace detail {

// running argbest over masks with the shared tie-break:
// smaller rank count (AFp) / larger z (AFz) wins; ties prefer larger U at the
// tying weight, then the smaller mask integer.
struct BestP {
  std::uint32_t cnt = std::numeric_limits<std::uint32_t>::max();
  std::int64_t u = -1;
  Mask mask = 0;
  void consider(std::uint32_t c, std::int64_t uu, Mask m) {
    if (c < cnt || (c == cnt && (uu > u || (uu == u && m < mask)))) {
      cnt = c;
      u = uu;
      mask = m;
    }
  }
  void merge(const BestP& o) {
    if (o.mask != 0) consider(o.cnt, o.u, o.mask);
  }
};

struct BestZ {
  double z = -std::numeric_limits<double>::infinity();
  std::int64_t u = -1;
  Mask mask = 0;
  void consider(double zz, std::int64_t uu, Mask m) {
    if (zz > z || (zz == z && (uu > u || (uu == u && m < mask)))) {
      z = zz;
      u = uu;
      mask = m;
    }
  }
  void merge(const BestZ& o) {
    if (o.mask != 0) consider(o.z, o.u, o.mask);
  }
};

inline AfBoth af_engine(const PValueMatrix& obs, const NullStore& null_store,
                        bool want_afp, bool want_afz, const AfOptions& opts) {
  const Index p = obs.p();
  const int K = static_cast<int>(obs.K());
  if (null_store.K != obs.K() || null_store.p != obs.p())
    throw ValidationError("p-value matrix and null store shapes do not match");
  const std::size_t N = null_store.entries();
  if (N < 2) throw ValidationError("pooled null needs B * p >= 2");

  // fixed-point -ln p, stored per phenotype for contiguous column updates
  std::vector<std::vector<std::int64_t>> nl_null(static_cast<std::size_t>(K)),
      nl_obs(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    nl_null[static_cast<std::size_t>(k)].resize(N);
    nl_obs[static_cast<std::size_t>(k)].resize(static_cast<std::size_t>(p));
  }
  for (std::size_t e = 0; e < N; ++e)
    for (int k = 0; k < K; ++k)
      nl_null[static_cast<std::size_t>(k)][e] =
          quantize_neglog(null_store.pvals[e * static_cast<std::size_t>(K) +
                                           static_cast<std::size_t>(k)]);
  for (Index j = 0; j < p; ++j)
    for (int k = 0; k < K; ++k)
      nl_obs[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)] =
          quantize_neglog(obs.values(j, k));

  const std::vector<Mask> masks = enumerate_weights(K);
  const std::size_t nmasks = masks.size();
  const int nthreads = resolve_threads(opts.threads);
  const std::size_t nchunks =
      std::max<std::size_t>(1, std::min<std::size_t>(static_cast<std::size_t>(nthreads),
                                                     nmasks));

  std::vector<std::vector<std::uint32_t>> chunk_null_min;
  std::vector<std::vector<BestP>> chunk_obs_p;
  std::vector<std::vector<double>> chunk_null_max;
  std::vector<std::vector<BestZ>> chunk_obs_z;
  if (want_afp) {
    chunk_null_min.assign(nchunks, std::vector<std::uint32_t>(
                                       N, std::numeric_limits<std::uint32_t>::max()));
    chunk_obs_p.assign(nchunks, std::vector<BestP>(static_cast<std::size_t>(p)));
  }
  if (want_afz) {
    chunk_null_max.assign(
        nchunks,
        std::vector<double>(N, -std::numeric_limits<double>::infinity()));
    chunk_obs_z.assign(nchunks, std::vector<BestZ>(static_cast<std::size_t>(p)));
  }
  std::vector<std::string> degenerate;

  parallel_for(nchunks, opts.threads, [&](std::size_t chunk) {
    const std::size_t begin = chunk * nmasks / nchunks;
    const std::size_t end = (chunk + 1) * nmasks / nchunks;
    if (begin >= end) return;

    std::vector<std::int64_t> u_null(N, 0), u_obs(static_cast<std::size_t>(p), 0);
    std::vector<std::int64_t> sorted(N);
    Mask current = 0;
    // seed the chunk's running sums from scratch, then Gray-step
    for (std::size_t mi = begin; mi < end; ++mi) {
      const Mask m = masks[mi];
      Mask delta = current ^ m;
      while (delta != 0) {
        const int k = std::countr_zero(delta);
        delta &= delta - 1;
        const std::int64_t* coln = nl_null[static_cast<std::size_t>(k)].data();
        const std::int64_t* colo = nl_obs[static_cast<std::size_t>(k)].data();
        if (m & (Mask{1} << k)) {
          for (std::size_t e = 0; e < N; ++e) u_null[e] += coln[e];
          for (Index j = 0; j < p; ++j)
            u_obs[static_cast<std::size_t>(j)] += colo[j];
        } else {
          for (std::size_t e = 0; e < N; ++e) u_null[e] -= coln[e];
          for (Index j = 0; j < p; ++j)
            u_obs[static_cast<std::size_t>(j)] -= colo[j];
        }
      }
      current = m;

      if (want_afp) {
        std::copy(u_null.begin(), u_null.end(), sorted.begin());
        std::sort(sorted.begin(), sorted.end());
        auto count_ge = [&](std::int64_t u) {
          return static_cast<std::uint32_t>(
              N - static_cast<std::size_t>(
                      std::lower_bound(sorted.begin(), sorted.end(), u) -
                      sorted.begin()));
        };
        auto& nmin = chunk_null_min[chunk];
        for (std::size_t e = 0; e < N; ++e) {
          const std::uint32_t c = count_ge(u_null[e]);
          if (c < nmin[e]) nmin[e] = c;
        }
        auto& omin = chunk_obs_p[chunk];
        for (Index j = 0; j < p; ++j) {
          const std::size_t sj = static_cast<std::size_t>(j);
          omin[sj].consider(count_ge(u_obs[sj]), u_obs[sj], m);
        }
      }
      if (want_afz) {
        // population moments over the pooled null, per the permutation scheme
        std::int64_t total = 0;
        for (std::size_t e = 0; e < N; ++e) total += u_null[e];
        const double mean = static_cast<double>(total) / static_cast<double>(N);
        double ss = 0.0;
        for (std::size_t e = 0; e < N; ++e) {
          const double ddev = static_cast<double>(u_null[e]) - mean;
          ss += ddev * ddev;
        }
        const double sd = std::sqrt(ss / static_cast<double>(N));
        if (!(sd > 0.0))
          throw DegenerateNull("pooled null is constant for weight mask " +
                               std::to_string(m));
        auto& nmax = chunk_null_max[chunk];
        for (std::size_t e = 0; e < N; ++e) {
          const double z = (static_cast<double>(u_null[e]) - mean) / sd;
          if (z > nmax[e]) nmax[e] = z;
        }
        auto& omax = chunk_obs_z[chunk];
        for (Index j = 0; j < p; ++j) {
          const std::size_t sj = static_cast<std::size_t>(j);
          const double z = (static_cast<double>(u_obs[sj]) - mean) / sd;
          omax[sj].consider(z, u_obs[sj], m);
        }
      }
    }
  });

  AfBoth out;
  const double floor_value = 1.0 / (static_cast<double>(N) + 1.0);
  auto add_resolution_warning = [&](AfOutput& o) {
    if (opts.significance_target > 0.0 &&
        opts.significance_target < 1.0 / static_cast<double>(N))
      o.warnings.push_back("significance target " +
                           format_double(opts.significance_target) +
                           " is below the permutation resolution 1/(B*p) = " +
                           format_double(1.0 / static_cast<double>(N)));
  };

  if (want_afp) {
    std::vector<std::uint32_t> null_min = std::move(chunk_null_min[0]);
    for (std::size_t c = 1; c < nchunks; ++c)
      for (std::size_t e = 0; e < N; ++e)
        null_min[e] = std::min(null_min[e], chunk_null_min[c][e]);
    std::vector<BestP> best = std::move(chunk_obs_p[0]);
    for (std::size_t c = 1; c < nchunks; ++c)
      for (Index j = 0; j < p; ++j)
        best[static_cast<std::size_t>(j)].merge(chunk_obs_p[c][static_cast<std::size_t>(j)]);
    std::vector<std::uint32_t> sorted_min = null_min;
    std::sort(sorted_min.begin(), sorted_min.end());
    out.afp.genes.resize(static_cast<std::size_t>(p));
    for (Index j = 0; j < p; ++j) {
      const auto& b = best[static_cast<std::size_t>(j)];
      AdaptiveResult r;
      r.statistic = static_cast<double>(b.cnt) / static_cast<double>(N);
      r.weight_mask = b.mask;
      r.u_at_weight = static_cast<double>(b.u) / kNeglogFixedScale;
      const std::size_t le =
          static_cast<std::size_t>(std::upper_bound(sorted_min.begin(), sorted_min.end(),
                                                    b.cnt) -
                                   sorted_min.begin());
      r.p_raw = static_cast<double>(le) / static_cast<double>(N);
      r.floor_flag = le == 0;
      r.p_floored = r.floor_flag ? floor_value : r.p_raw;
      out.afp.genes[static_cast<std::size_t>(j)] = r;
    }
    add_resolution_warning(out.afp);
  }

  if (want_afz) {
    std::vector<double> null_max = std::move(chunk_null_max[0]);
    for (std::size_t c = 1; c < nchunks; ++c)
      for (std::size_t e = 0; e < N; ++e)
        null_max[e] = std::max(null_max[e], chunk_null_max[c][e]);
    std::vector<BestZ> best = std::move(chunk_obs_z[0]);
    for (std::size_t c = 1; c < nchunks; ++c)
      for (Index j = 0; j < p; ++j)
        best[static_cast<std::size_t>(j)].merge(chunk_obs_z[c][static_cast<std::size_t>(j)]);
    std::vector<double> sorted_max = null_max;
    std::sort(sorted_max.begin(), sorted_max.end());
    out.afz.genes.resize(static_cast<std::size_t>(p));
    for (Index j = 0; j < p; ++j) {
      const auto& b = best[static_cast<std::size_t>(j)];
      AdaptiveResult r;
      r.statistic = b.z;
      r.weight_mask = b.mask;
      r.u_at_weight = static_cast<double>(b.u) / kNeglogFixedScale;
      const std::size_t ge =
          N - static_cast<std::size_t>(std::lower_bound(sorted_max.begin(),
                                                        sorted_max.end(), b.z) -
                                       sorted_max.begin());
      r.p_raw = static_cast<double>(ge) / static_cast<double>(N);
      r.floor_flag = ge == 0;
      r.p_floored = r.floor_flag ? floor_value : r.p_raw;
      out.afz.genes[static_cast<std::size_t>(j)] = r;
    }
    add_resolution_warning(out.afz);
  }
  return out;
}

}  // namespace detail

// AFp: for each weight vector, rank the observed weighted statistic inside
// the pooled permutation null; the statistic is the minimum rank p-value over
// all weights, and its own p-value is the rank of that minimum among the
// pooled nulls' minima.
inline AfOutput afp(const PValueMatrix& obs, const NullStore& null_store,
                    const AfOptions& opts = {}) {
  return detail::af_engine(obs, null_store, true, false, opts).afp;
}

// AFz: standardize each weighted statistic by the pooled-null mean and
// (population) standard deviation; the statistic is the maximum standardized
// value over all weights.
inline AfOutput afz(const PValueMatrix& obs, const NullStore& null_store,
                    const AfOptions& opts = {}) {
  return detail::af_engine(obs, null_store, false, true, opts).afz;
}

// Both methods in one pass over the weight space (they share the U columns).
inline AfBoth run_af_both(const PValueMatrix& obs, const NullStore& null_store,
                          const AfOptions& opts = {}) {
  return detail::af_engine(obs, null_store, true, true, opts);
}

struct CombineResult {
  double statistic = 0.0;
  double p_raw = 1.0;
  double p_floored = 1.0;
  bool floor_flag = false;
};

// Fisher's combination with the permutation null: T = -2 * sum ln p, compared
// against the pooled null statistics (count >=).
inline std::vector<CombineResult> fisher_perm(const PValueMatrix& obs,
                                              const NullStore& null_store) {
  const Index p = obs.p();
  const int K = static_cast<int>(obs.K());
  if (null_store.K != obs.K() || null_store.p != obs.p())
    throw ValidationError("p-value matrix and null store shapes do not match");
  const std::size_t N = null_store.entries();
  std::vector<double> null_stat(N, 0.0);
  for (std::size_t e = 0; e < N; ++e) {
    double t = 0.0;
    for (int k = 0; k < K; ++k)
      t += -2.0 * std::log(null_store.pvals[e * static_cast<std::size_t>(K) +
                                            static_cast<std::size_t>(k)]);
    null_stat[e] = t;
  }
  std::vector<double> sorted = null_stat;
  std::sort(sorted.begin(), sorted.end());
  const double floor_value = 1.0 / (static_cast<double>(N) + 1.0);
  std::vector<CombineResult> out(static_cast<std::size_t>(p));
  for (Index j = 0; j < p; ++j) {
    double t = 0.0;
    for (int k = 0; k < K; ++k) t += -2.0 * std::log(obs.values(j, k));
    const std::size_t ge =
        N - static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), t) -
                                     sorted.begin());
    CombineResult r;
    r.statistic = t;
    r.p_raw = static_cast<double>(ge) / static_cast<double>(N);
    r.floor_flag = ge == 0;
    r.p_floored = r.floor_flag ? floor_value : r.p_raw;
    out[static_cast<std::size_t>(j)] = r;
  }
  return out;
}

// minP with the permutation null: statistic = min_k p_jk (count <=).
inline std::vector<CombineResult> minp_perm(const PValueMatrix& obs,
                                            const NullStore& null_store) {
  const Index p = obs.p();
  const int K = static_cast<int>(obs.K());
  if (null_store.K != obs.K() || null_store.p != obs.p())
    throw ValidationError("p-value matrix and null store shapes do not match");
  const std::size_t N = null_store.entries();
  std::vector<double> null_stat(N);
  for (std::size_t e = 0; e < N; ++e) {
    double m = 1.0;
    for (int k = 0; k < K; ++k)
      m = std::min(m, null_store.pvals[e * static_cast<std::size_t>(K) +
                                       static_cast<std::size_t>(k)]);
    null_stat[e] = m;
  }
  std::vector<double> sorted = null_stat;
  std::sort(sorted.begin(), sorted.end());
  const double floor_value = 1.0 / (static_cast<double>(N) + 1.0);
  std::vector<CombineResult> out(static_cast<std::size_t>(p));
  for (Index j = 0; j < p; ++j) {
    double m = 1.0;
    for (int k = 0; k < K; ++k) m = std::min(m, obs.values(j, k));
    const std::size_t le = static_cast<std::size_t>(
        std::upper_bound(sorted.begin(), sorted.end(), m) - sorted.begin());
    CombineResult r;
    r.statistic = m;
    r.p_raw = static_cast<double>(le) / static_cast<double>(N);
    r.floor_flag = le == 0;
    r.p_floored = r.floor_flag ? floor_value : r.p_raw;
    out[static_cast<std::size_t>(j)] = r;
  }
  return out;
}

// Indices of genes passing the Bonferroni cut p < alpha / p_total.
// null_entries (B*p) enables the resolution warning; 0 skips it.
inline std::vector<std::size_t> bonferroni_select(const std::vector<double>& p_values,
                                                  double alpha,
                                                  std::size_t null_entries = 0,
                                                  std::vector<std::string>* warnings = nullptr) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw ValidationError("alpha must lie in (0, 1)");
  const double threshold = alpha / static_cast<double>(p_values.size());
  if (warnings && null_entries > 0 && threshold < 1.0 / static_cast<double>(null_entries))
    warnings->push_back("Bonferroni threshold " + format_double(threshold) +
                        " is below the permutation resolution 1/(B*p) = " +
                        format_double(1.0 / static_cast<double>(null_entries)) +
                        "; increase --perms");
  std::vector<std::size_t> selected;
  for (std::size_t j = 0; j < p_values.size(); ++j)
    if (p_values[j] < threshold) selected.push_back(j);
  return selected;
}

}  // namespace afcomb
