#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "afcomb/af_combine.hpp"
#include "afcomb/data_model.hpp"
#include "afcomb/errors.hpp"
#include "afcomb/glm.hpp"
#include "afcomb/parallel.hpp"
#include "afcomb/perm_null.hpp"
#include "afcomb/rng.hpp"

namespace afcomb {

// Signed weights v = w * sign(theta) from L bootstrap replicates, restricted
// to a gene subset (typically the Bonferroni-significant genes).
struct SignedWeightTensor {
  int L = 0;
  Method method = Method::afp;
  std::vector<Index> gene_subset;        // indices into the source Dataset
  std::vector<std::string> gene_ids;     // ids for the subset, same order
  std::vector<std::string> phenotype_names;
  Index K = 0;
  std::vector<std::int8_t> values;  // (l * p' + j) * K + k, in {-1, 0, 1}

  Index subset_size() const { return static_cast<Index>(gene_subset.size()); }
  std::int8_t at(int l, Index j, Index k) const {
    return values[(static_cast<std::size_t>(l) * static_cast<std::size_t>(subset_size()) +
                   static_cast<std::size_t>(j)) *
                      static_cast<std::size_t>(K) +
                  static_cast<std::size_t>(k)];
  }
};

namespace detail {

inline bool has_constant_column(const Eigen::MatrixXd& m) {
  for (Index c = 0; c < m.cols(); ++c) {
    const double first = m(0, c);
    bool constant = true;
    for (Index r = 1; r < m.rows(); ++r)
      if (m(r, c) != first) {
        constant = false;
        break;
      }
    if (constant) return true;
  }
  return false;
}

}  // namespace detail

// Reruns the full pipeline (association fits, fresh permutation null with
// B_boot permutations, the chosen adaptive method) on L bootstrap resamples
// of the samples. Replicates whose resample degenerates (a covariate column
// becomes constant) are redrawn, up to 10 attempts.
inline SignedWeightTensor bootstrap_weights(const Dataset& d, int L, int B_boot,
                                            Method method, std::uint64_t seed,
                                            const std::vector<Index>& gene_subset,
                                            int threads = 0) {
  if (L < 2) throw ValidationError("need L >= 2 bootstrap replicates");
  if (gene_subset.empty()) throw ValidationError("gene subset is empty");
  if (method != Method::afp && method != Method::afz)
    throw ValidationError("bootstrap supports the AFp and AFz methods");
  const Index n = d.n(), K = d.K();

  SignedWeightTensor out;
  out.L = L;
  out.method = method;
  out.gene_subset = gene_subset;
  out.K = K;
  out.phenotype_names = d.phenotype_names;
  for (const Index j : gene_subset) {
    if (j < 0 || j >= d.p()) throw ValidationError("gene subset index out of range");
    out.gene_ids.push_back(d.gene_ids[static_cast<std::size_t>(j)]);
  }
  const Index psub = out.subset_size();
  out.values.resize(static_cast<std::size_t>(L) * static_cast<std::size_t>(psub) *
                    static_cast<std::size_t>(K));

  parallel_for(static_cast<std::size_t>(L), threads, [&](std::size_t sl) {
    const int l = static_cast<int>(sl) + 1;
    Dataset boot;
    int attempt = 0;
    for (;; ++attempt) {
      if (attempt >= 10)
        throw DegenerateBootstrap("bootstrap replicate " + std::to_string(l) +
                                  " degenerated in 10 consecutive redraws");
      Rng rng(stream_key(seed, rngtag::bootstrap, static_cast<std::uint64_t>(l),
                         static_cast<std::uint64_t>(attempt)));
      std::vector<Index> idx(static_cast<std::size_t>(n));
      for (Index i = 0; i < n; ++i)
        idx[static_cast<std::size_t>(i)] =
            static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));

      boot = d;  // reuse ids/kinds; rows are re-drawn below
      for (Index i = 0; i < n; ++i) {
        const Index src = idx[static_cast<std::size_t>(i)];
        boot.expression.col(i) = d.expression.col(src);
        boot.phenotypes.row(i) = d.phenotypes.row(src);
        if (d.M() > 0) boot.covariates.row(i) = d.covariates.row(src);
      }
      if (d.M() > 0 && detail::has_constant_column(boot.covariates)) continue;
      break;
    }

    // inner stages run single-threaded; the replicates are the parallel axis
    const PValueMatrix pm = assoc_pvalues(boot, 1);
    const std::uint64_t null_seed =
        stream_key(seed, rngtag::bootstrap, static_cast<std::uint64_t>(l), 1u << 20);
    const NullStore ns = build_null(boot, B_boot, null_seed, false, 1);
    AfOptions opts;
    opts.threads = 1;
    const AfOutput af = method == Method::afp ? afp(pm, ns, opts) : afz(pm, ns, opts);

    std::int8_t* slab = out.values.data() +
                        static_cast<std::size_t>(sl) * static_cast<std::size_t>(psub) *
                            static_cast<std::size_t>(K);
    for (Index jj = 0; jj < psub; ++jj) {
      const Index j = gene_subset[static_cast<std::size_t>(jj)];
      const Mask w = af.genes[static_cast<std::size_t>(j)].weight_mask;
      for (Index k = 0; k < K; ++k) {
        const bool selected = (w >> k) & 1u;
        slab[static_cast<std::size_t>(jj) * static_cast<std::size_t>(K) +
             static_cast<std::size_t>(k)] =
            selected ? pm.signs(j, k) : std::int8_t{0};
      }
    }
  });
  return out;
}

// 4 * population variance of the unsigned weights across bootstraps;
// 0 = perfectly stable, 1 = maximally unstable.
inline Eigen::MatrixXd variability_index(const SignedWeightTensor& t) {
  if (t.L < 2) throw ValidationError("variability index needs L >= 2");
  const Index psub = t.subset_size(), K = t.K;
  Eigen::MatrixXd u(psub, K);
  for (Index j = 0; j < psub; ++j)
    for (Index k = 0; k < K; ++k) {
      double mean = 0.0;
      for (int l = 0; l < t.L; ++l) mean += std::abs(t.at(l, j, k));
      mean /= static_cast<double>(t.L);
      double ss = 0.0;
      for (int l = 0; l < t.L; ++l) {
        const double dev = std::abs(t.at(l, j, k)) - mean;
        ss += dev * dev;
      }
      u(j, k) = 4.0 * ss / static_cast<double>(t.L);
    }
  return u;
}

// Fraction of bootstraps in which two genes carry identical signed weights
// across every phenotype. Symmetric with unit diagonal.
inline Eigen::MatrixXd comembership(const SignedWeightTensor& t) {
  const Index psub = t.subset_size(), K = t.K;
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(psub, psub);
  for (int l = 0; l < t.L; ++l) {
    const std::int8_t* slab = t.values.data() +
                              static_cast<std::size_t>(l) *
                                  static_cast<std::size_t>(psub) *
                                  static_cast<std::size_t>(K);
    for (Index a = 0; a < psub; ++a) {
      const std::int8_t* ra = slab + static_cast<std::size_t>(a) * K;
      v(a, a) += 1.0;
      for (Index b = a + 1; b < psub; ++b) {
        const std::int8_t* rb = slab + static_cast<std::size_t>(b) * K;
        bool same = true;
        for (Index k = 0; k < K; ++k)
          if (ra[k] != rb[k]) {
            same = false;
            break;
          }
        if (same) {
          v(a, b) += 1.0;
          v(b, a) += 1.0;
        }
      }
    }
  }
  v /= static_cast<double>(t.L);
  return v;
}

inline void write_weight_tensor(const SignedWeightTensor& t, const std::string& path) {
  TsvWriter w(path);
  w.field("l");
  w.field("gene_id");
  w.field("k");
  w.field("v");
  w.endrow();
  for (int l = 0; l < t.L; ++l)
    for (Index j = 0; j < t.subset_size(); ++j)
      for (Index k = 0; k < t.K; ++k) {
        w.field(l + 1);
        w.field(t.gene_ids[static_cast<std::size_t>(j)]);
        w.field(static_cast<long long>(k + 1));
        w.field(static_cast<long long>(t.at(l, j, k)));
        w.endrow();
      }
  w.close();
}

}  // namespace afcomb
