#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "afcomb/data_model.hpp"
#include "afcomb/errors.hpp"
#include "afcomb/glm.hpp"
#include "afcomb/parallel.hpp"
#include "afcomb/rng.hpp"
#include "afcomb/tsv.hpp"

namespace afcomb {

inline const char* kSchemeResidual = "residual-permutation";
inline const char* kSchemeResidualCov = "residual-permutation+covariates";

// Pooled permutation null: B x p x K p-values from refitting each phenotype
// on permuted covariate-adjusted gene residuals. Gives every statistic an
// empirical null of size B * p.
struct NullStore {
  int B = 0;
  Index p = 0;
  Index K = 0;
  std::uint64_t seed = 0;
  std::string scheme = kSchemeResidual;
  std::vector<double> pvals;  // ((b * p) + j) * K + k

  double at(int b, Index j, Index k) const {
    return pvals[(static_cast<std::size_t>(b) * static_cast<std::size_t>(p) +
                  static_cast<std::size_t>(j)) *
                     static_cast<std::size_t>(K) +
                 static_cast<std::size_t>(k)];
  }
  std::size_t entries() const {
    return static_cast<std::size_t>(B) * static_cast<std::size_t>(p);
  }
};

// One shared permutation per b across all genes keeps the pooled null
// exchangeable across genes and makes the store a pure function of
// (Dataset, B, seed, scheme). The null regression excludes covariates unless
// include_covariates_in_null is set.
inline NullStore build_null(const Dataset& d, int B, std::uint64_t seed,
                            bool include_covariates_in_null = false, int threads = 0) {
  if (B < 1) throw ValidationError("need B >= 1 permutations");
  const Index p = d.p(), n = d.n(), K = d.K(), M = d.M();

  NullStore store;
  store.B = B;
  store.p = p;
  store.K = K;
  store.seed = seed;
  store.scheme = include_covariates_in_null ? kSchemeResidualCov : kSchemeResidual;
  store.pvals.resize(static_cast<std::size_t>(B) * static_cast<std::size_t>(p) *
                     static_cast<std::size_t>(K));

  // covariate-adjusted residuals, one row per gene
  Eigen::MatrixXd resid(p, n);
  {
    Eigen::MatrixXd A(n, M + 1);
    A.col(0).setOnes();
    if (M > 0) A.rightCols(M) = d.covariates;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
    qr.setThreshold(1e-10);
    if (qr.rank() < M + 1) throw RankDeficient("collinear covariates in build_null");
    parallel_for(static_cast<std::size_t>(p), threads, [&](std::size_t sj) {
      const Index j = static_cast<Index>(sj);
      const Eigen::VectorXd xj = d.expression.row(j).transpose();
      resid.row(j) = (xj - A * qr.solve(xj)).transpose();
    }, 16);
  }

  // permutation-invariant pieces of the simple-regression cells
  Eigen::VectorXd mean_e(p), sxx(p);
  for (Index j = 0; j < p; ++j) {
    const double m = resid.row(j).mean();
    mean_e(j) = m;
    sxx(j) = (resid.row(j).array() - m).square().sum();
  }
  Eigen::MatrixXd yc(n, K);  // centered continuous phenotypes
  Eigen::VectorXd syy(K);
  for (Index k = 0; k < K; ++k) {
    const double m = d.phenotypes.col(k).mean();
    yc.col(k) = d.phenotypes.col(k).array() - m;
    syy(k) = yc.col(k).squaredNorm();
  }

  parallel_for(static_cast<std::size_t>(B), threads, [&](std::size_t sb) {
    const int b = static_cast<int>(sb) + 1;  // permutations are 1-indexed
    const std::vector<std::uint32_t> perm =
        permutation_order(seed, b, static_cast<std::size_t>(n));
    Eigen::VectorXd eb(n);
    Eigen::MatrixXd X;
    if (include_covariates_in_null && M > 0) X.resize(n, M + 2);
    double* slab = store.pvals.data() +
                   static_cast<std::size_t>(sb) * static_cast<std::size_t>(p) *
                       static_cast<std::size_t>(K);
    for (Index j = 0; j < p; ++j) {
      for (Index i = 0; i < n; ++i)
        eb(i) = resid(j, perm[static_cast<std::size_t>(i)]);
      for (Index k = 0; k < K; ++k) {
        detail::CellFit c;
        try {
          if (include_covariates_in_null && M > 0) {
            X.col(0).setOnes();
            X.col(1) = eb;
            X.rightCols(M) = d.covariates;
            const Eigen::VectorXd ykv = d.phenotypes.col(k);
            c = d.kinds[static_cast<std::size_t>(k)] == PhenotypeKind::count
                    ? detail::poisson_design(ykv, X, nullptr)
                    : detail::gaussian_design(ykv, X, nullptr);
          } else if (d.kinds[static_cast<std::size_t>(k)] == PhenotypeKind::count) {
            const Eigen::VectorXd ykv = d.phenotypes.col(k);
            c = detail::poisson_simple(ykv.data(), eb.data(), n);
          } else {
            c = detail::gaussian_simple_presummed(eb.data(), yc.col(k).data(), n,
                                                  mean_e(j), sxx(j), syy(k));
          }
        } catch (const Error&) {
          c = detail::CellFit{};
          c.flag = CellFlag::fit_error;
        }
        slab[static_cast<std::size_t>(j) * static_cast<std::size_t>(K) +
             static_cast<std::size_t>(k)] = floor_pvalue(c.p);
      }
    }
  });
  return store;
}

// Binary layout: 8-byte magic ("AFNULL1" + scheme byte), u32 B, u32 p, u32 K,
// u32 reserved, u64 seed, then B*p*K little-endian float64.
inline void save_null(const NullStore& s, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  char magic[8] = {'A', 'F', 'N', 'U', 'L', 'L', '1', 'r'};
  if (s.scheme == kSchemeResidualCov) magic[7] = 'z';
  out.write(magic, 8);
  const std::uint32_t dims[4] = {static_cast<std::uint32_t>(s.B),
                                 static_cast<std::uint32_t>(s.p),
                                 static_cast<std::uint32_t>(s.K), 0};
  out.write(reinterpret_cast<const char*>(dims), 16);
  out.write(reinterpret_cast<const char*>(&s.seed), 8);
  out.write(reinterpret_cast<const char*>(s.pvals.data()),
            static_cast<std::streamsize>(s.pvals.size() * sizeof(double)));
  out.close();
  if (!out) throw IoError("write failed for " + path);
}

inline NullStore load_null(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "AFNULL1", 7) != 0 ||
      (magic[7] != 'r' && magic[7] != 'z'))
    throw IoError(path + " is not a null-store file");
  std::uint32_t dims[4];
  in.read(reinterpret_cast<char*>(dims), 16);
  NullStore s;
  s.B = static_cast<int>(dims[0]);
  s.p = static_cast<Index>(dims[1]);
  s.K = static_cast<Index>(dims[2]);
  s.scheme = magic[7] == 'z' ? kSchemeResidualCov : kSchemeResidual;
  in.read(reinterpret_cast<char*>(&s.seed), 8);
  const std::size_t count = static_cast<std::size_t>(s.B) *
                            static_cast<std::size_t>(s.p) *
                            static_cast<std::size_t>(s.K);
  s.pvals.resize(count);
  in.read(reinterpret_cast<char*>(s.pvals.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!in || in.gcount() != static_cast<std::streamsize>(count * sizeof(double)))
    throw IoError(path + " is truncated");
  for (const double v : s.pvals)
    if (!(v > 0.0) || v > 1.0) throw IoError(path + " holds an out-of-range p-value");
  return s;
}

// debug export
inline void write_null_tsv(const NullStore& s, const std::string& path) {
  TsvWriter w(path);
  w.field("b");
  w.field("gene_index");
  w.field("k");
  w.field("pvalue");
  w.endrow();
  for (int b = 0; b < s.B; ++b)
    for (Index j = 0; j < s.p; ++j)
      for (Index k = 0; k < s.K; ++k) {
        w.field(b + 1);
        w.field(static_cast<long long>(j));
        w.field(static_cast<long long>(k + 1));
        w.field(s.at(b, j, k));
        w.endrow();
      }
  w.close();
}

}  // namespace afcomb
