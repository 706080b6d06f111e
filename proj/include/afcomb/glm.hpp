#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "afcomb/data_model.hpp"
#include "afcomb/errors.hpp"
#include "afcomb/parallel.hpp"
#include "afcomb/stats.hpp"

namespace afcomb {

// |theta| beyond this in a Poisson fit is treated as separation.
constexpr double kSeparationTheta = 30.0;
constexpr int kIrlsMaxIter = 25;
constexpr double kIrlsTol = 1e-8;

struct GlmFit {
  double theta = 0.0;  // coefficient of the gene term
  double se = 0.0;
  double wald_p = 1.0;
  int sign = 0;
  double intercept = 0.0;
  std::vector<double> alpha_coefs;  // covariate coefficients, M entries
  bool converged = true;
  int iterations = 0;
  CellFlag flag = CellFlag::ok;
};

namespace detail {

struct CellFit {
  double theta = 0.0;
  double se = 0.0;
  double p = 1.0;
  int sign = 0;
  double intercept = 0.0;
  CellFlag flag = CellFlag::ok;
  bool converged = true;
  int iterations = 0;
};

inline int sign_of(double v) { return v > 0.0 ? 1 : (v < 0.0 ? -1 : 0); }

// OLS of y on [1, x], closed form. Means and sums of squares may be supplied
// by the caller when they are known (they are permutation-invariant, which
// lets the permutation-null builder hoist them out of its inner loop).
inline CellFit gaussian_simple_presummed(const double* x, const double* yc,
                                         Eigen::Index n, double mean_x, double sxx,
                                         double syy) {
  CellFit fit;
  if (!(sxx > 0.0) || sxx < 1e-24 * static_cast<double>(n)) {
    fit.flag = CellFlag::fit_error;
    return fit;
  }
  double sxy = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) sxy += (x[i] - mean_x) * yc[i];
  const double theta = sxy / sxx;
  double rss = syy - theta * sxy;
  if (rss < 0.0) rss = 0.0;
  fit.theta = theta;
  fit.sign = sign_of(theta);
  const double df = static_cast<double>(n - 2);
  if (rss <= 1e-20 * (syy > 0.0 ? syy : 1.0)) {
    fit.flag = CellFlag::degenerate_residual;
    fit.se = 0.0;
    fit.p = kPFloor;
    return fit;
  }
  fit.se = std::sqrt(rss / df / sxx);
  fit.p = t_pvalue_two_sided(theta / fit.se, df);
  return fit;
}

inline CellFit gaussian_simple(const double* y, const double* x, Eigen::Index n) {
  double mean_x = 0.0, mean_y = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    mean_x += x[i];
    mean_y += y[i];
  }
  mean_x /= static_cast<double>(n);
  mean_y /= static_cast<double>(n);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double xc = x[i] - mean_x;
    const double yc = y[i] - mean_y;
    sxx += xc * xc;
    syy += yc * yc;
    sxy += xc * yc;
  }
  if (!(sxx > 0.0) || sxx < 1e-24 * static_cast<double>(n))
    throw RankDeficient("gene vector is constant");
  CellFit fit;
  const double theta = sxy / sxx;
  double rss = syy - theta * sxy;
  if (rss < 0.0) rss = 0.0;
  fit.theta = theta;
  fit.sign = sign_of(theta);
  fit.intercept = mean_y - theta * mean_x;
  const double df = static_cast<double>(n - 2);
  if (rss <= 1e-20 * (syy > 0.0 ? syy : 1.0)) {
    fit.flag = CellFlag::degenerate_residual;
    fit.p = kPFloor;
    return fit;
  }
  fit.se = std::sqrt(rss / df / sxx);
  fit.p = t_pvalue_two_sided(theta / fit.se, df);
  return fit;
}

// OLS of y on a full design matrix; column 1 is the gene term.
inline CellFit gaussian_design(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                               std::vector<double>* alpha_out) {
  const Eigen::Index n = X.rows(), d = X.cols();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  qr.setThreshold(1e-10);
  if (qr.rank() < d) throw RankDeficient("design matrix is rank deficient");
  const Eigen::VectorXd beta = qr.solve(y);
  const Eigen::VectorXd resid = y - X * beta;
  const double rss = resid.squaredNorm();
  const double tss = (y.array() - y.mean()).square().sum();
  CellFit fit;
  fit.theta = beta(1);
  fit.sign = sign_of(beta(1));
  fit.intercept = beta(0);
  if (alpha_out) alpha_out->assign(beta.data() + 2, beta.data() + d);
  const double df = static_cast<double>(n - d);
  if (rss <= 1e-20 * (tss > 0.0 ? tss : 1.0)) {
    fit.flag = CellFlag::degenerate_residual;
    fit.p = kPFloor;
    return fit;
  }
  const double sigma2 = rss / df;
  const Eigen::MatrixXd xtx_inv =
      (X.transpose() * X).ldlt().solve(Eigen::MatrixXd::Identity(d, d));
  fit.se = std::sqrt(sigma2 * xtx_inv(1, 1));
  fit.p = t_pvalue_two_sided(fit.theta / fit.se, df);
  return fit;
}

inline double poisson_deviance(const double* y, const double* mu, Eigen::Index n) {
  double dev = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double t = mu[i] - y[i];
    if (y[i] > 0.0) t += y[i] * std::log(y[i] / mu[i]);
    dev += 2.0 * t;
  }
  return dev;
}

// Poisson regression of y on [1, x] with log link, scalar IRLS with step
// halving so the deviance never increases. No allocations in the loop.
inline CellFit poisson_simple(const double* y, const double* x, Eigen::Index n,
                              std::vector<double>* deviance_trace = nullptr) {
  CellFit fit;
  double mean_y = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) mean_y += y[i];
  mean_y /= static_cast<double>(n);

  double b0 = std::log(mean_y > 0.0 ? mean_y : 0.1);
  double b1 = 0.0;
  auto deviance_at = [&](double a0, double a1) {
    double dev = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double eta = a0 + a1 * x[i];
      if (eta > 300.0) eta = 300.0;
      const double mu = std::exp(eta);
      double t = mu - y[i];
      if (y[i] > 0.0) t += y[i] * std::log(y[i] / mu);
      dev += 2.0 * t;
    }
    return dev;
  };
  double dev = deviance_at(b0, b1);
  if (deviance_trace) {
    deviance_trace->clear();
    deviance_trace->push_back(dev);
  }
  double inv11 = 0.0;
  int iter = 0;
  bool converged = false;
  for (; iter < kIrlsMaxIter; ++iter) {
    double sw = 0.0, swx = 0.0, swxx = 0.0, swz = 0.0, swxz = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double eta = b0 + b1 * x[i];
      if (eta > 300.0) eta = 300.0;
      const double mu = std::exp(eta);
      const double z = eta + (y[i] - mu) / mu;
      sw += mu;
      swx += mu * x[i];
      swxx += mu * x[i] * x[i];
      swz += mu * z;
      swxz += mu * x[i] * z;
    }
    const double det = sw * swxx - swx * swx;
    if (!(std::fabs(det) > 1e-12 * (sw * swxx + 1e-300))) {
      fit.flag = CellFlag::fit_error;
      fit.iterations = iter;
      return fit;
    }
    double nb0 = (swxx * swz - swx * swxz) / det;
    double nb1 = (sw * swxz - swx * swz) / det;
    double ndev = deviance_at(nb0, nb1);
    int halvings = 0;
    while (ndev > dev + 1e-10 && halvings < 10) {
      nb0 = 0.5 * (nb0 + b0);
      nb1 = 0.5 * (nb1 + b1);
      ndev = deviance_at(nb0, nb1);
      ++halvings;
    }
    if (ndev > dev + 1e-10) {  // cannot improve; stay at current point
      converged = true;
      break;
    }
    const double change = std::fabs(dev - ndev);
    b0 = nb0;
    b1 = nb1;
    dev = ndev;
    if (deviance_trace) deviance_trace->push_back(dev);
    if (change < kIrlsTol) {
      converged = true;
      ++iter;
      break;
    }
  }
  // information matrix at the final coefficients
  {
    double sw = 0.0, swx = 0.0, swxx = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double eta = b0 + b1 * x[i];
      if (eta > 300.0) eta = 300.0;
      const double mu = std::exp(eta);
      sw += mu;
      swx += mu * x[i];
      swxx += mu * x[i] * x[i];
    }
    const double det = sw * swxx - swx * swx;
    if (!(det > 0.0)) {
      fit.flag = CellFlag::fit_error;
      fit.iterations = iter;
      return fit;
    }
    inv11 = sw / det;
  }
  fit.theta = b1;
  fit.sign = sign_of(b1);
  fit.intercept = b0;
  fit.se = std::sqrt(inv11);
  fit.iterations = iter;
  fit.converged = converged;
  if (!converged) fit.flag = CellFlag::not_converged;
  if (std::fabs(b1) > kSeparationTheta) {
    fit.flag = CellFlag::separation;
    fit.p = kPFloor;
    return fit;
  }
  fit.p = z_pvalue_two_sided(b1 / fit.se);
  return fit;
}

// Poisson IRLS on a full design matrix; column 1 is the gene term.
inline CellFit poisson_design(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                              std::vector<double>* alpha_out,
                              std::vector<double>* deviance_trace = nullptr) {
  const Eigen::Index n = X.rows(), d = X.cols();
  {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    qr.setThreshold(1e-10);
    if (qr.rank() < d) throw RankDeficient("design matrix is rank deficient");
  }
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(d);
  const double mean_y = y.mean();
  beta(0) = std::log(mean_y > 0.0 ? mean_y : 0.1);
  auto deviance_at = [&](const Eigen::VectorXd& b, Eigen::VectorXd& mu) {
    Eigen::VectorXd eta = X * b;
    for (Eigen::Index i = 0; i < n; ++i)
      mu(i) = std::exp(eta(i) > 300.0 ? 300.0 : eta(i));
    double dev = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double t = mu(i) - y(i);
      if (y(i) > 0.0) t += y(i) * std::log(y(i) / mu(i));
      dev += 2.0 * t;
    }
    return dev;
  };
  Eigen::VectorXd mu(n), numu(n);
  double dev = deviance_at(beta, mu);
  if (deviance_trace) {
    deviance_trace->clear();
    deviance_trace->push_back(dev);
  }
  CellFit fit;
  bool converged = false;
  int iter = 0;
  Eigen::MatrixXd xtwx(d, d);
  for (; iter < kIrlsMaxIter; ++iter) {
    Eigen::VectorXd eta = X * beta;
    for (Eigen::Index i = 0; i < n; ++i)
      mu(i) = std::exp(eta(i) > 300.0 ? 300.0 : eta(i));
    Eigen::VectorXd z = eta + (y - mu).cwiseQuotient(mu);
    const Eigen::MatrixXd xw = X.transpose() * mu.asDiagonal();
    xtwx = xw * X;
    Eigen::VectorXd nbeta = xtwx.ldlt().solve(xw * z);
    double ndev = deviance_at(nbeta, numu);
    int halvings = 0;
    while (ndev > dev + 1e-10 && halvings < 10) {
      nbeta = 0.5 * (nbeta + beta);
      ndev = deviance_at(nbeta, numu);
      ++halvings;
    }
    if (ndev > dev + 1e-10) {
      converged = true;
      break;
    }
    const double change = std::fabs(dev - ndev);
    beta = nbeta;
    dev = ndev;
    if (deviance_trace) deviance_trace->push_back(dev);
    if (change < kIrlsTol) {
      converged = true;
      ++iter;
      break;
    }
  }
  {
    Eigen::VectorXd eta = X * beta;
    for (Eigen::Index i = 0; i < n; ++i)
      mu(i) = std::exp(eta(i) > 300.0 ? 300.0 : eta(i));
    xtwx = X.transpose() * mu.asDiagonal() * X;
  }
  const Eigen::MatrixXd cov = xtwx.ldlt().solve(Eigen::MatrixXd::Identity(d, d));
  fit.theta = beta(1);
  fit.sign = sign_of(beta(1));
  fit.intercept = beta(0);
  if (alpha_out) alpha_out->assign(beta.data() + 2, beta.data() + d);
  fit.se = std::sqrt(cov(1, 1));
  fit.iterations = iter;
  fit.converged = converged;
  if (!converged) fit.flag = CellFlag::not_converged;
  if (std::fabs(fit.theta) > kSeparationTheta) {
    fit.flag = CellFlag::separation;
    fit.p = kPFloor;
    return fit;
  }
  fit.p = z_pvalue_two_sided(fit.theta / fit.se);
  return fit;
}

inline GlmFit to_glmfit(const CellFit& c, std::vector<double> alpha = {}) {
  GlmFit f;
  f.theta = c.theta;
  f.se = c.se;
  f.wald_p = c.p;
  f.sign = c.sign;
  f.intercept = c.intercept;
  f.alpha_coefs = std::move(alpha);
  f.converged = c.converged;
  f.iterations = c.iterations;
  f.flag = c.flag;
  return f;
}

}  // namespace detail

// Residual of x after projecting onto span{1, covariate columns}.
inline Eigen::VectorXd residualize(const Eigen::VectorXd& x,
                                   const Eigen::MatrixXd& covariates) {
  const Eigen::Index n = x.size(), M = covariates.cols();
  if (n <= M + 1)
    throw ValidationError("residualize needs n > M + 1 (n=" + std::to_string(n) +
                          ", M=" + std::to_string(M) + ")");
  if (M == 0) return x.array() - x.mean();
  Eigen::MatrixXd A(n, M + 1);
  A.col(0).setOnes();
  A.rightCols(M) = covariates;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  qr.setThreshold(1e-10);
  if (qr.rank() < M + 1) throw RankDeficient("collinear covariates in residualize");
  return x - A * qr.solve(x);
}

inline GlmFit fit_gaussian(const Eigen::VectorXd& y, const Eigen::VectorXd& x,
                           const Eigen::MatrixXd& covariates, bool include_covariates) {
  const Eigen::Index n = y.size(), M = include_covariates ? covariates.cols() : 0;
  if (x.size() != n || (include_covariates && covariates.rows() != n && M > 0))
    throw ValidationError("fit_gaussian: mismatched input lengths");
  if (n <= M + 2)
    throw ValidationError("fit_gaussian needs n > M + 2 (n=" + std::to_string(n) +
                          ", M=" + std::to_string(M) + ")");
  if (M == 0) return detail::to_glmfit(detail::gaussian_simple(y.data(), x.data(), n));
  Eigen::MatrixXd X(n, M + 2);
  X.col(0).setOnes();
  X.col(1) = x;
  X.rightCols(M) = covariates;
  std::vector<double> alpha;
  const detail::CellFit c = detail::gaussian_design(y, X, &alpha);
  return detail::to_glmfit(c, std::move(alpha));
}

inline GlmFit fit_poisson(const Eigen::VectorXd& y, const Eigen::VectorXd& x,
                          const Eigen::MatrixXd& covariates, bool include_covariates,
                          std::vector<double>* deviance_trace = nullptr) {
  const Eigen::Index n = y.size(), M = include_covariates ? covariates.cols() : 0;
  if (x.size() != n) throw ValidationError("fit_poisson: mismatched input lengths");
  if (n <= M + 2)
    throw ValidationError("fit_poisson needs n > M + 2 (n=" + std::to_string(n) +
                          ", M=" + std::to_string(M) + ")");
  bool any_positive = false;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!detail::is_nonneg_integer(y(i)))
      throw KindViolation("fit_poisson response holds non-count value " +
                          format_double(y(i)));
    if (y(i) > 0.0) any_positive = true;
  }
  if (!any_positive) throw ValidationError("fit_poisson needs at least one y > 0");
  if (M == 0)
    return detail::to_glmfit(
        detail::poisson_simple(y.data(), x.data(), n, deviance_trace));
  Eigen::MatrixXd X(n, M + 2);
  X.col(0).setOnes();
  X.col(1) = x;
  X.rightCols(M) = covariates;
  std::vector<double> alpha;
  const detail::CellFit c = detail::poisson_design(y, X, &alpha, deviance_trace);
  return detail::to_glmfit(c, std::move(alpha));
}

// Observed association matrix: cell (j, k) is the Wald p-value of the gene
// term when phenotype k is regressed on gene j with covariates included.
// Per-cell failures are recorded as flags (p = 1, sign = 0), never thrown.
inline PValueMatrix assoc_pvalues(const Dataset& d, int threads = 0) {
  const Index p = d.p(), n = d.n(), K = d.K(), M = d.M();
  PValueMatrix out;
  out.values.resize(p, K);
  out.signs.resize(p, K);
  out.flags.resize(p, K);
  out.gene_ids = d.gene_ids;
  out.phenotype_names = d.phenotype_names;

  parallel_for(static_cast<std::size_t>(p), threads, [&](std::size_t sj) {
    const Index j = static_cast<Index>(sj);
    Eigen::MatrixXd X;
    if (M > 0) {
      X.resize(n, M + 2);
      X.col(0).setOnes();
      X.col(1) = d.expression.row(j).transpose();
      X.rightCols(M) = d.covariates;
    }
    const Eigen::VectorXd xj = d.expression.row(j).transpose();
    for (Index k = 0; k < K; ++k) {
      const Eigen::VectorXd yk = d.phenotypes.col(k);
      detail::CellFit c;
      try {
        if (d.kinds[static_cast<std::size_t>(k)] == PhenotypeKind::count) {
          c = M > 0 ? detail::poisson_design(yk, X, nullptr)
                    : detail::poisson_simple(yk.data(), xj.data(), n);
        } else {
          c = M > 0 ? detail::gaussian_design(yk, X, nullptr)
                    : detail::gaussian_simple(yk.data(), xj.data(), n);
        }
      } catch (const Error&) {
        c = detail::CellFit{};
        c.flag = CellFlag::fit_error;
      }
      out.values(j, k) = floor_pvalue(c.p);
      out.signs(j, k) = static_cast<std::int8_t>(c.sign);
      out.flags(j, k) = static_cast<std::uint8_t>(c.flag);
    }
  });
  return out;
}

}  // namespace afcomb
