#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <set>
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

// Benchmark generators: 150 genes, 10 phenotypes, hierarchical association
// through three shared random effects. Settings differ in phenotype noise
// (A: comparable effect sizes, B: one phenotype much stronger), presence of a
// confounder (II) and count-valued phenotypes (III).
enum class SimSetting { IA, IB, IIA, IIB, IIIA, IIIB };

constexpr Index kSimGenes = 150;
constexpr Index kSimPhenotypes = 10;

inline std::string setting_name(SimSetting s) {
  switch (s) {
    case SimSetting::IA: return "IA";
    case SimSetting::IB: return "IB";
    case SimSetting::IIA: return "IIA";
    case SimSetting::IIB: return "IIB";
    case SimSetting::IIIA: return "IIIA";
    case SimSetting::IIIB: return "IIIB";
  }
  return "?";
}

inline SimSetting parse_setting(const std::string& s) {
  if (s == "IA") return SimSetting::IA;
  if (s == "IB") return SimSetting::IB;
  if (s == "IIA") return SimSetting::IIA;
  if (s == "IIB") return SimSetting::IIB;
  if (s == "IIIA") return SimSetting::IIIA;
  if (s == "IIIB") return SimSetting::IIIB;
  throw ValidationError("unknown simulation setting '" + s +
                        "' (expected IA, IB, IIA, IIB, IIIA or IIIB)");
}

enum class PoissonRate { exp_link, identity };

struct SimConfig {
  SimSetting setting = SimSetting::IA;
  double sigma_mu = 0.0;
  int n1 = 100;
  double sigma_x = 0.5;
  std::array<double, 10> sigma_k{};
  double sigma_c = 0.5;  // confounder scale, setting II only
  std::uint64_t seed = 0;
  PoissonRate rate = PoissonRate::exp_link;
};

inline SimConfig make_sim_config(SimSetting setting, double sigma_mu, std::uint64_t seed) {
  SimConfig c;
  c.setting = setting;
  c.sigma_mu = sigma_mu;
  c.seed = seed;
  c.sigma_k.fill(2.0);
  c.sigma_k[9] = 1.0;
  switch (setting) {
    case SimSetting::IA:
    case SimSetting::IIA:
    case SimSetting::IIIA:
      break;
    case SimSetting::IB:
    case SimSetting::IIB:
      c.sigma_k[0] = 0.05;
      c.sigma_k[4] = 0.05;
      break;
    case SimSetting::IIIB:
      c.sigma_k[4] = 0.01;
      break;
  }
  return c;
}

// 150 x 10 truth: genes 1-50 drive phenotypes 1-9 (u1 appears in both phenotype
// groups), genes 51-100 drive phenotypes 5-9, genes 101-150 drive phenotype 10.
// All zero under the global null sigma_mu = 0.
inline Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> truth_weights(
    SimSetting, double sigma_mu) {
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> w =
      Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>::Zero(kSimGenes,
                                                                        kSimPhenotypes);
  if (sigma_mu == 0.0) return w;
  for (Index j = 0; j < 50; ++j)
    for (Index k = 0; k < 9; ++k) w(j, k) = 1;
  for (Index j = 50; j < 100; ++j)
    for (Index k = 4; k < 9; ++k) w(j, k) = 1;
  for (Index j = 100; j < 150; ++j) w(j, 9) = 1;
  return w;
}

struct SimResult {
  Dataset dataset;
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> truth;
};

inline SimResult simulate(const SimConfig& c) {
  const Index n = c.n1;
  if (n < 10) throw ValidationError("simulation needs n1 >= 10");
  const bool with_confounder =
      c.setting == SimSetting::IIA || c.setting == SimSetting::IIB;
  const bool count_phenos =
      c.setting == SimSetting::IIIA || c.setting == SimSetting::IIIB;

  Rng rng(stream_key(c.seed, rngtag::simulate));
  Eigen::MatrixXd u(n, 3);
  Eigen::VectorXd z(n);
  for (Index i = 0; i < n; ++i) {
    u(i, 0) = rng.normal(0.0, c.sigma_mu);
    u(i, 1) = rng.normal(0.0, c.sigma_mu);
    u(i, 2) = rng.normal(0.0, c.sigma_mu);
    z(i) = with_confounder ? rng.normal(0.0, c.sigma_c) : 0.0;
  }

  Eigen::MatrixXd phenotypes(n, kSimPhenotypes);
  std::vector<PhenotypeKind> kinds(kSimPhenotypes, PhenotypeKind::continuous);
  for (Index k = 0; k < kSimPhenotypes; ++k) {
    const double sk = c.sigma_k[static_cast<std::size_t>(k)];
    for (Index i = 0; i < n; ++i) {
      if (count_phenos && k < 4) {
        // the analysis GLM uses a log link, so the u1 effect enters the rate
        // through exp(); the identity variant clamps negative rates instead
        const double rate = c.rate == PoissonRate::exp_link
                                ? std::exp(u(i, 0))
                                : std::max(u(i, 0), 0.01);
        phenotypes(i, k) = static_cast<double>(rng.poisson(rate));
      } else if (k < 4) {
        phenotypes(i, k) = rng.normal(u(i, 0) + z(i), sk);
      } else if (k < 9) {
        phenotypes(i, k) = rng.normal(u(i, 0) + u(i, 1) + z(i), sk);
      } else {
        phenotypes(i, k) = rng.normal(u(i, 2), sk);
      }
    }
    if (count_phenos && k < 4) kinds[static_cast<std::size_t>(k)] = PhenotypeKind::count;
  }

  Eigen::MatrixXd expression(kSimGenes, n);
  for (Index j = 0; j < kSimGenes; ++j) {
    const Index block = j < 50 ? 0 : (j < 100 ? 1 : 2);
    for (Index i = 0; i < n; ++i) {
      double mean = u(i, block);
      if (with_confounder && block == 0) mean += z(i);
      expression(j, i) = rng.normal(mean, c.sigma_x);
    }
  }

  std::vector<std::string> gene_ids, sample_ids, pheno_names;
  for (Index j = 0; j < kSimGenes; ++j) gene_ids.push_back("gene" + std::to_string(j + 1));
  for (Index i = 0; i < n; ++i) sample_ids.push_back("s" + std::to_string(i + 1));
  for (Index k = 0; k < kSimPhenotypes; ++k)
    pheno_names.push_back("Y" + std::to_string(k + 1));

  Eigen::MatrixXd covariates(n, with_confounder ? 1 : 0);
  std::vector<std::string> cov_names;
  if (with_confounder) {
    covariates.col(0) = z;
    cov_names.push_back("z");
  }

  SimResult r;
  r.dataset = make_dataset(std::move(expression), std::move(phenotypes),
                           std::move(covariates), kinds, std::move(gene_ids),
                           std::move(sample_ids), std::move(pheno_names),
                           std::move(cov_names));
  r.truth = truth_weights(c.setting, c.sigma_mu);
  return r;
}

struct BenchmarkMetrics {
  SimSetting setting = SimSetting::IA;
  double sigma_mu = 0.0;
  int S = 0;
  int B = 0;
  double alpha = 0.05;
  std::map<Method, double> rejection_rate;  // type I error when sigma_mu = 0
  std::map<Method, double> sensitivity;     // AFp / AFz only
  std::map<Method, double> specificity;
  std::map<Method, Eigen::MatrixXd> mean_weight;  // 3 gene blocks x 10 phenotypes
  int reruns = 0;
  std::vector<std::string> log;
};

// Repeats simulate -> assoc -> null -> combine S times and aggregates the
// metrics. Replicates are independent (seeded by replicate index) and any
// replicate that fails is redrawn with a fresh sub-seed.
inline BenchmarkMetrics run_benchmark(SimSetting setting, double sigma_mu, int S, int B,
                                      const std::set<Method>& methods, double alpha,
                                      std::uint64_t seed, int threads = 0,
                                      PoissonRate rate = PoissonRate::exp_link) {
  if (S < 1) throw ValidationError("need S >= 1 replicates");
  const bool want_afp = methods.count(Method::afp) > 0;
  const bool want_afz = methods.count(Method::afz) > 0;
  const bool want_fisher = methods.count(Method::fisher) > 0;
  const bool want_minp = methods.count(Method::minp) > 0;

  struct ReplicateCounts {
    std::map<Method, std::size_t> rejected;
    std::map<Method, double> tp, fn, tn, fp;          // weight confusion sums
    std::map<Method, Eigen::MatrixXd> weight_sum;     // 3 x 10
    int attempts = 1;
    std::string note;
  };
  std::vector<ReplicateCounts> reps(static_cast<std::size_t>(S));

  parallel_for(static_cast<std::size_t>(S), threads, [&](std::size_t s) {
    ReplicateCounts rc;
    for (int attempt = 0;; ++attempt) {
      if (attempt >= 5)
        throw Error("benchmark replicate " + std::to_string(s + 1) +
                    " failed 5 times in a row");
      try {
        SimConfig cfg = make_sim_config(setting, sigma_mu, 0);
        cfg.rate = rate;
        cfg.seed = stream_key(seed, rngtag::replicate, s, 2u * attempt);
        const std::uint64_t null_seed =
            stream_key(seed, rngtag::replicate, s, 2u * attempt + 1);
        const SimResult sim = simulate(cfg);
        const PValueMatrix pm = assoc_pvalues(sim.dataset, 1);
        const NullStore ns = build_null(sim.dataset, B, null_seed, false, 1);

        AfOptions opts;
        opts.threads = 1;
        AfBoth af;
        if (want_afp || want_afz)
          af = detail::af_engine(pm, ns, want_afp, want_afz, opts);

        auto count_rejections = [&](const std::vector<double>& pvec) {
          std::size_t c = 0;
          for (const double v : pvec)
            if (v < alpha) ++c;
          return c;
        };
        auto adaptive_metrics = [&](Method m, const AfOutput& out) {
          std::vector<double> pv;
          pv.reserve(out.genes.size());
          for (const auto& g : out.genes) pv.push_back(g.p_floored);
          rc.rejected[m] = count_rejections(pv);
          Eigen::MatrixXd wsum = Eigen::MatrixXd::Zero(3, kSimPhenotypes);
          double tp = 0, fn = 0, tn = 0, fp = 0;
          for (Index j = 0; j < kSimGenes; ++j) {
            const Mask w = out.genes[static_cast<std::size_t>(j)].weight_mask;
            const Index block = j < 50 ? 0 : (j < 100 ? 1 : 2);
            for (Index k = 0; k < kSimPhenotypes; ++k) {
              const bool est = (w >> k) & 1u;
              const bool truth = sim.truth(j, k) != 0;
              wsum(block, k) += est ? 1.0 : 0.0;
              if (truth)
                (est ? tp : fn) += 1.0;
              else
                (est ? fp : tn) += 1.0;
            }
          }
          rc.tp[m] = tp;
          rc.fn[m] = fn;
          rc.tn[m] = tn;
          rc.fp[m] = fp;
          rc.weight_sum[m] = wsum / 50.0;  // per-block mean within one replicate
        };
        if (want_afp) adaptive_metrics(Method::afp, af.afp);
        if (want_afz) adaptive_metrics(Method::afz, af.afz);
        if (want_fisher) {
          const auto res = fisher_perm(pm, ns);
          std::vector<double> pv;
          for (const auto& r : res) pv.push_back(r.p_floored);
          rc.rejected[Method::fisher] = count_rejections(pv);
        }
        if (want_minp) {
          const auto res = minp_perm(pm, ns);
          std::vector<double> pv;
          for (const auto& r : res) pv.push_back(r.p_floored);
          rc.rejected[Method::minp] = count_rejections(pv);
        }
        rc.attempts = attempt + 1;
        break;
      } catch (const Error& e) {
        rc.note = "replicate " + std::to_string(s + 1) + " attempt " +
                  std::to_string(attempt + 1) + " failed: " + e.what();
      }
    }
    reps[s] = std::move(rc);
  });

  BenchmarkMetrics out;
  out.setting = setting;
  out.sigma_mu = sigma_mu;
  out.S = S;
  out.B = B;
  out.alpha = alpha;
  const double denom_genes = static_cast<double>(kSimGenes) * static_cast<double>(S);
  for (const Method m : {Method::afp, Method::afz, Method::fisher, Method::minp}) {
    if (!methods.count(m)) continue;
    double rej = 0;
    for (const auto& rc : reps) rej += static_cast<double>(rc.rejected.at(m));
    out.rejection_rate[m] = rej / denom_genes;
  }
  for (const Method m : {Method::afp, Method::afz}) {
    if (!methods.count(m)) continue;
    double tp = 0, fn = 0, tn = 0, fp = 0;
    Eigen::MatrixXd wsum = Eigen::MatrixXd::Zero(3, kSimPhenotypes);
    for (const auto& rc : reps) {
      tp += rc.tp.at(m);
      fn += rc.fn.at(m);
      tn += rc.tn.at(m);
      fp += rc.fp.at(m);
      wsum += rc.weight_sum.at(m);
    }
    if (tp + fn > 0) out.sensitivity[m] = tp / (tp + fn);
    if (tn + fp > 0) out.specificity[m] = tn / (tn + fp);
    out.mean_weight[m] = wsum / static_cast<double>(S);
  }
  for (const auto& rc : reps) {
    out.reruns += rc.attempts - 1;
    if (!rc.note.empty()) out.log.push_back(rc.note);
  }
  return out;
}

}  // namespace afcomb
