#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>

#include "afcomb/data_model.hpp"
#include "afcomb/errors.hpp"
#include "afcomb/stats.hpp"
#include "afcomb/tsv.hpp"

namespace afcomb {

struct ClusterAssignment {
  std::vector<std::vector<Index>> modules;  // disjoint gene index sets
  std::vector<Index> scattered;
  std::vector<double> tightness;  // per module, mean within-module co-membership
  bool empty_result = false;      // nothing met the thresholds; all scattered
};

namespace detail {

// mean co-membership over off-diagonal pairs; singletons count as perfectly tight
inline double cluster_tightness(const Eigen::MatrixXd& v, const std::vector<Index>& members) {
  const std::size_t s = members.size();
  if (s < 2) return 1.0;
  double sum = 0.0;
  for (std::size_t a = 0; a < s; ++a)
    for (std::size_t b = a + 1; b < s; ++b) sum += v(members[a], members[b]);
  return sum / (0.5 * static_cast<double>(s) * static_cast<double>(s - 1));
}

inline double between_mean(const Eigen::MatrixXd& v, const std::vector<Index>& a,
                           const std::vector<Index>& b) {
  double sum = 0.0;
  for (const Index i : a)
    for (const Index j : b) sum += v(i, j);
  return sum / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
}

}  // namespace detail

// Average-linkage agglomeration on D = 1 - V, cut at the coarsest step where
// every cluster still has tightness >= alpha_tight. Clusters below min_size
// are labeled scattered, and at most max_modules survive, highest tightness
// first. The dense distance matrix assumes the input is the post-selection
// gene set, not a whole transcriptome.
inline ClusterAssignment tight_cluster(const Eigen::MatrixXd& v, std::size_t min_size = 20,
                                       double alpha_tight = 0.7,
                                       std::size_t max_modules = 16) {
  const Index p = v.rows();
  if (v.cols() != p) throw ValidationError("co-membership matrix must be square");
  if (min_size < 2) throw ValidationError("min_size must be >= 2");
  if (!(alpha_tight > 0.5 && alpha_tight <= 1.0))
    throw ValidationError("alpha_tight must lie in (0.5, 1]");

  Eigen::MatrixXd dist = 1.0 - v.array();
  std::vector<bool> alive(static_cast<std::size_t>(p), true);
  std::vector<double> sizes(static_cast<std::size_t>(p), 1.0);
  // within-cluster V sum over unordered pairs; lets each merged cluster's
  // tightness come out in O(1) from the linkage distance
  std::vector<double> pair_sum(static_cast<std::size_t>(p), 0.0);
  std::vector<bool> bad(static_cast<std::size_t>(p), false);
  std::size_t bad_count = 0;

  // cached nearest live neighbor per live cluster
  std::vector<double> nn_dist(static_cast<std::size_t>(p));
  std::vector<Index> nn_idx(static_cast<std::size_t>(p));
  auto refresh_nn = [&](Index i) {
    double best = std::numeric_limits<double>::infinity();
    Index bj = -1;
    for (Index j = 0; j < p; ++j) {
      if (j == i || !alive[static_cast<std::size_t>(j)]) continue;
      if (dist(i, j) < best || (dist(i, j) == best && j < bj)) {
        best = dist(i, j);
        bj = j;
      }
    }
    nn_dist[static_cast<std::size_t>(i)] = best;
    nn_idx[static_cast<std::size_t>(i)] = bj;
  };
  for (Index i = 0; i < p; ++i) refresh_nn(i);

  std::vector<std::pair<Index, Index>> merges;  // (kept slot, absorbed slot)
  std::vector<std::size_t> bad_after;           // bad cluster count after merge t
  merges.reserve(static_cast<std::size_t>(p));
  for (Index step = 0; step + 1 < p; ++step) {
    Index bi = -1;
    double best = std::numeric_limits<double>::infinity();
    for (Index i = 0; i < p; ++i) {
      if (!alive[static_cast<std::size_t>(i)]) continue;
      if (nn_dist[static_cast<std::size_t>(i)] < best ||
          (nn_dist[static_cast<std::size_t>(i)] == best && i < bi)) {
        best = nn_dist[static_cast<std::size_t>(i)];
        bi = i;
      }
    }
    Index bj = nn_idx[static_cast<std::size_t>(bi)];
    if (bj < bi) std::swap(bi, bj);

    const double si = sizes[static_cast<std::size_t>(bi)];
    const double sj = sizes[static_cast<std::size_t>(bj)];
    const double cross_sum = (1.0 - dist(bi, bj)) * si * sj;
    const double merged_pairs = pair_sum[static_cast<std::size_t>(bi)] +
                                pair_sum[static_cast<std::size_t>(bj)] + cross_sum;
    const double npairs = 0.5 * (si + sj) * (si + sj - 1.0);
    const bool merged_bad = merged_pairs / npairs < alpha_tight;
    bad_count += static_cast<std::size_t>(merged_bad) -
                 static_cast<std::size_t>(bad[static_cast<std::size_t>(bi)]) -
                 static_cast<std::size_t>(bad[static_cast<std::size_t>(bj)]);

    for (Index k = 0; k < p; ++k) {
      if (!alive[static_cast<std::size_t>(k)] || k == bi || k == bj) continue;
      const double nd = (si * dist(bi, k) + sj * dist(bj, k)) / (si + sj);
      dist(bi, k) = nd;
      dist(k, bi) = nd;
    }
    alive[static_cast<std::size_t>(bj)] = false;
    sizes[static_cast<std::size_t>(bi)] = si + sj;
    pair_sum[static_cast<std::size_t>(bi)] = merged_pairs;
    bad[static_cast<std::size_t>(bi)] = merged_bad;
    merges.emplace_back(bi, bj);
    bad_after.push_back(bad_count);

    refresh_nn(bi);
    for (Index k = 0; k < p; ++k) {
      if (!alive[static_cast<std::size_t>(k)] || k == bi) continue;
      if (nn_idx[static_cast<std::size_t>(k)] == bi ||
          nn_idx[static_cast<std::size_t>(k)] == bj ||
          dist(k, bi) < nn_dist[static_cast<std::size_t>(k)])
        refresh_nn(k);
    }
  }

  // coarsest cut (largest merge count) with every cluster still tight;
  // t = 0 (all singletons) always qualifies
  std::size_t chosen = 0;
  for (std::size_t t = merges.size(); t > 0; --t)
    if (bad_after[t - 1] == 0) {
      chosen = t;
      break;
    }

  // replay the first `chosen` merges to materialize the partition
  std::vector<std::vector<Index>> members(static_cast<std::size_t>(p));
  for (Index i = 0; i < p; ++i) members[static_cast<std::size_t>(i)] = {i};
  for (std::size_t t = 0; t < chosen; ++t) {
    auto& keep = members[static_cast<std::size_t>(merges[t].first)];
    auto& gone = members[static_cast<std::size_t>(merges[t].second)];
    keep.insert(keep.end(), gone.begin(), gone.end());
    gone.clear();
  }

  ClusterAssignment out;
  std::vector<std::pair<double, std::vector<Index>>> candidates;
  for (auto& c : members) {
    if (c.empty()) continue;
    if (c.size() >= min_size)
      candidates.emplace_back(detail::cluster_tightness(v, c), c);
    else
      out.scattered.insert(out.scattered.end(), c.begin(), c.end());
  }
  std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;  // deterministic order for ties
  });
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (i < max_modules) {
      std::vector<Index> m = candidates[i].second;
      std::sort(m.begin(), m.end());
      out.modules.push_back(std::move(m));
      out.tightness.push_back(candidates[i].first);
    } else {
      out.scattered.insert(out.scattered.end(), candidates[i].second.begin(),
                           candidates[i].second.end());
    }
  }
  std::sort(out.scattered.begin(), out.scattered.end());
  out.empty_result = out.modules.empty();
  return out;
}

// Repeatedly merge the module pair with the highest mean between-module
// co-membership while that mean stays >= merge_tau.
inline ClusterAssignment merge_modules(ClusterAssignment a, const Eigen::MatrixXd& v,
                                       double merge_tau = 0.5) {
  for (;;) {
    double best = -1.0;
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < a.modules.size(); ++i)
      for (std::size_t j = i + 1; j < a.modules.size(); ++j) {
        const double m = detail::between_mean(v, a.modules[i], a.modules[j]);
        if (m > best) {
          best = m;
          bi = i;
          bj = j;
        }
      }
    if (best < merge_tau || a.modules.size() < 2) break;
    a.modules[bi].insert(a.modules[bi].end(), a.modules[bj].begin(), a.modules[bj].end());
    std::sort(a.modules[bi].begin(), a.modules[bi].end());
    a.modules.erase(a.modules.begin() + static_cast<std::ptrdiff_t>(bj));
  }
  a.tightness.clear();
  for (const auto& m : a.modules)
    a.tightness.push_back(detail::cluster_tightness(v, m));
  a.empty_result = a.modules.empty();
  return a;
}

struct GeneSet {
  std::string id;
  std::string description;
  std::vector<std::string> genes;
};

// GMT: set id <TAB> description <TAB> member genes...
inline std::vector<GeneSet> load_gmt(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<GeneSet> sets;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_tabs(line);
    if (cells.size() < 3)
      throw IoError("GMT line with fewer than 3 fields in " + path);
    GeneSet s;
    s.id = std::string(cells[0]);
    s.description = std::string(cells[1]);
    for (std::size_t i = 2; i < cells.size(); ++i)
      if (!cells[i].empty()) s.genes.emplace_back(cells[i]);
    sets.push_back(std::move(s));
  }
  if (sets.empty()) throw IoError("no gene sets in " + path);
  return sets;
}

struct EnrichmentRow {
  std::string set_id;
  std::size_t set_size = 0;  // members inside the universe
  std::size_t overlap = 0;
  double p = 1.0;
  double q = 1.0;
};

// One-sided hypergeometric upper-tail test of each set against the module,
// within the given universe; rows sorted by ascending p with BH q-values.
inline std::vector<EnrichmentRow> enrich(const std::vector<std::string>& module_genes,
                                         const std::vector<GeneSet>& gene_sets,
                                         const std::vector<std::string>& universe,
                                         std::vector<std::string>* warnings = nullptr) {
  if (module_genes.empty()) throw ValidationError("module is empty");
  if (gene_sets.empty()) throw ValidationError("no gene sets supplied");
  const std::unordered_set<std::string> uni(universe.begin(), universe.end());
  std::unordered_set<std::string> module;
  for (const auto& g : module_genes) {
    if (!uni.count(g))
      throw ValidationError("module gene '" + g + "' is not in the universe");
    module.insert(g);
  }
  std::vector<EnrichmentRow> rows;
  std::vector<double> pvals;
  for (const auto& s : gene_sets) {
    std::size_t in_universe = 0, overlap = 0;
    std::unordered_set<std::string> seen;
    for (const auto& g : s.genes) {
      if (!uni.count(g) || !seen.insert(g).second) continue;
      ++in_universe;
      if (module.count(g)) ++overlap;
    }
    if (in_universe == 0) {
      if (warnings)
        warnings->push_back("gene set '" + s.id + "' has no members in the universe; skipped");
      continue;
    }
    EnrichmentRow r;
    r.set_id = s.id;
    r.set_size = in_universe;
    r.overlap = overlap;
    r.p = hypergeom_upper_tail(overlap, in_universe, module.size(), uni.size());
    rows.push_back(r);
    pvals.push_back(r.p);
  }
  const std::vector<double> q = bh_qvalues(pvals);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].q = q[i];
  std::sort(rows.begin(), rows.end(), [](const EnrichmentRow& a, const EnrichmentRow& b) {
    if (a.p != b.p) return a.p < b.p;
    return a.set_id < b.set_id;
  });
  return rows;
}

}  // namespace afcomb
