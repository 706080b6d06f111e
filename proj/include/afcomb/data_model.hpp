#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "afcomb/errors.hpp"
#include "afcomb/stats.hpp"
#include "afcomb/tsv.hpp"

namespace afcomb {

using Index = Eigen::Index;

enum class PhenotypeKind : std::uint8_t { continuous, count };

// Hard cap: weight enumeration is 2^K - 1 subsets, kept below 32768.
constexpr int kMaxPhenotypes = 15;
// Above this the combinatorial search gets expensive; warn, don't reject.
constexpr int kRecommendedMaxPhenotypes = 10;

inline std::vector<PhenotypeKind> parse_kinds(const std::string& comma_list) {
  std::vector<PhenotypeKind> kinds;
  std::size_t start = 0;
  while (start <= comma_list.size()) {
    std::size_t pos = comma_list.find(',', start);
    if (pos == std::string::npos) pos = comma_list.size();
    const std::string item = comma_list.substr(start, pos - start);
    if (item == "continuous")
      kinds.push_back(PhenotypeKind::continuous);
    else if (item == "count")
      kinds.push_back(PhenotypeKind::count);
    else
      throw ValidationError("unknown phenotype kind '" + item +
                            "' (expected 'continuous' or 'count')");
    start = pos + 1;
  }
  return kinds;
}

inline std::string kind_name(PhenotypeKind k) {
  return k == PhenotypeKind::count ? "count" : "continuous";
}

// Immutable after construction; safe to share across worker threads.
struct Dataset {
  Eigen::MatrixXd expression;  // p x n, expression(j, i) = gene j, sample i
  Eigen::MatrixXd phenotypes;  // n x K
  Eigen::MatrixXd covariates;  // n x M, M may be 0
  std::vector<PhenotypeKind> kinds;
  std::vector<std::string> gene_ids;
  std::vector<std::string> sample_ids;
  std::vector<std::string> phenotype_names;
  std::vector<std::string> covariate_names;

  Index p() const { return expression.rows(); }
  Index n() const { return expression.cols(); }
  Index K() const { return phenotypes.cols(); }
  Index M() const { return covariates.cols(); }
};

namespace detail {

inline bool is_nonneg_integer(double v) {
  return v >= 0.0 && std::floor(v) == v;
}

inline void check_dataset(const Dataset& d) {
  const Index p = d.p(), n = d.n(), K = d.K(), M = d.M();
  if (K < 1) throw ValidationError("need at least one phenotype");
  if (K > kMaxPhenotypes)
    throw TooManyPhenotypes("K=" + std::to_string(K) + " exceeds the cap of " +
                            std::to_string(kMaxPhenotypes));
  if (p < 2) throw ValidationError("need at least 2 genes, got " + std::to_string(p));
  if (n < M + 3)
    throw ValidationError("need n >= M + 3 samples (n=" + std::to_string(n) +
                          ", M=" + std::to_string(M) + ")");
  if (d.phenotypes.rows() != n || (M > 0 && d.covariates.rows() != n))
    throw ValidationError("phenotype/covariate rows do not match sample count");
  if (static_cast<Index>(d.kinds.size()) != K)
    throw ValidationError("phenotype_kinds lists " + std::to_string(d.kinds.size()) +
                          " entries for K=" + std::to_string(K) + " phenotypes");
  if (static_cast<Index>(d.gene_ids.size()) != p ||
      static_cast<Index>(d.sample_ids.size()) != n ||
      static_cast<Index>(d.phenotype_names.size()) != K)
    throw ValidationError("id list lengths do not match matrix shapes");
  for (Index k = 0; k < K; ++k) {
    if (d.kinds[k] != PhenotypeKind::count) continue;
    for (Index i = 0; i < n; ++i) {
      const double v = d.phenotypes(i, k);
      if (!is_nonneg_integer(v))
        throw KindViolation("count phenotype '" + d.phenotype_names[k] +
                            "' holds non-count value " + format_double(v) +
                            " for sample " + d.sample_ids[i]);
    }
  }
}

struct ParsedSampleTable {
  std::vector<std::string> col_names;                       // header minus id column
  std::unordered_map<std::string, std::vector<double>> by_id;  // sample -> row
  std::vector<std::string> id_order;
};

inline ParsedSampleTable parse_sample_table(const std::string& path) {
  const TsvTable t = read_tsv(path);
  if (t.header.size() < 2) throw IoError("no data columns in " + path);
  ParsedSampleTable out;
  out.col_names.assign(t.header.begin() + 1, t.header.end());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    if (row.size() != t.header.size())
      throw NonNumericCell("row " + std::to_string(r + 2) + " of " + path +
                           " has " + std::to_string(row.size()) +
                           " cells, expected " + std::to_string(t.header.size()));
    std::vector<double> vals(row.size() - 1);
    for (std::size_t c = 1; c < row.size(); ++c)
      vals[c - 1] = parse_double(row[c], "in " + path + " row " + std::to_string(r + 2));
    if (!out.by_id.emplace(row[0], std::move(vals)).second)
      throw ValidationError("duplicate sample id '" + row[0] + "' in " + path);
    out.id_order.push_back(row[0]);
  }
  return out;
}

}  // namespace detail

// Builds a Dataset from already-aligned matrices, checking every invariant.
inline Dataset make_dataset(Eigen::MatrixXd expression, Eigen::MatrixXd phenotypes,
                            Eigen::MatrixXd covariates, std::vector<PhenotypeKind> kinds,
                            std::vector<std::string> gene_ids,
                            std::vector<std::string> sample_ids,
                            std::vector<std::string> phenotype_names,
                            std::vector<std::string> covariate_names = {}) {
  Dataset d;
  d.expression = std::move(expression);
  d.phenotypes = std::move(phenotypes);
  d.covariates = std::move(covariates);
  d.kinds = std::move(kinds);
  d.gene_ids = std::move(gene_ids);
  d.sample_ids = std::move(sample_ids);
  d.phenotype_names = std::move(phenotype_names);
  d.covariate_names = std::move(covariate_names);
  if (d.covariates.size() == 0) d.covariates.resize(d.phenotypes.rows(), 0);
  if (d.covariate_names.empty() && d.M() > 0) {
    for (Index m = 0; m < d.M(); ++m)
      d.covariate_names.push_back("cov" + std::to_string(m + 1));
  }
  detail::check_dataset(d);
  return d;
}

// Loads the three TSV inputs. Sample order is canonicalized to the expression
// header order; phenotype and covariate rows are re-matched by sample id.
// covariate_path may be empty (M = 0).
inline Dataset load_dataset(const std::string& expression_path,
                            const std::string& phenotype_path,
                            const std::string& covariate_path,
                            const std::vector<PhenotypeKind>& kinds) {
  const TsvTable et = read_tsv(expression_path);
  if (et.header.size() < 2) throw IoError("no sample columns in " + expression_path);
  std::vector<std::string> sample_ids(et.header.begin() + 1, et.header.end());
  const Index n = static_cast<Index>(sample_ids.size());
  const Index p = static_cast<Index>(et.rows.size());

  Eigen::MatrixXd expression(p, n);
  std::vector<std::string> gene_ids(p);
  for (Index j = 0; j < p; ++j) {
    const auto& row = et.rows[static_cast<std::size_t>(j)];
    if (static_cast<Index>(row.size()) != n + 1)
      throw NonNumericCell("row " + std::to_string(j + 2) + " of " + expression_path +
                           " has " + std::to_string(row.size()) + " cells, expected " +
                           std::to_string(n + 1));
    gene_ids[j] = row[0];
    for (Index i = 0; i < n; ++i)
      expression(j, i) = parse_double(row[static_cast<std::size_t>(i + 1)],
                                      "in " + expression_path + " gene " + row[0]);
  }

  auto align = [&](const detail::ParsedSampleTable& t,
                   const std::string& path) -> Eigen::MatrixXd {
    Eigen::MatrixXd m(n, static_cast<Index>(t.col_names.size()));
    for (Index i = 0; i < n; ++i) {
      const auto it = t.by_id.find(sample_ids[static_cast<std::size_t>(i)]);
      if (it == t.by_id.end())
        throw MissingSample("sample '" + sample_ids[static_cast<std::size_t>(i)] +
                            "' from " + expression_path + " is absent in " + path);
      for (Index c = 0; c < m.cols(); ++c)
        m(i, c) = it->second[static_cast<std::size_t>(c)];
    }
    if (static_cast<Index>(t.by_id.size()) != n) {
      for (const auto& id : t.id_order)
        if (std::find(sample_ids.begin(), sample_ids.end(), id) == sample_ids.end())
          throw MissingSample("sample '" + id + "' from " + path + " is absent in " +
                              expression_path);
    }
    return m;
  };

  const detail::ParsedSampleTable pt = detail::parse_sample_table(phenotype_path);
  Eigen::MatrixXd phenotypes = align(pt, phenotype_path);

  Eigen::MatrixXd covariates(n, 0);
  std::vector<std::string> covariate_names;
  if (!covariate_path.empty()) {
    const detail::ParsedSampleTable ct = detail::parse_sample_table(covariate_path);
    covariates = align(ct, covariate_path);
    covariate_names = ct.col_names;
  }

  return make_dataset(std::move(expression), std::move(phenotypes), std::move(covariates),
                      kinds, std::move(gene_ids), std::move(sample_ids), pt.col_names,
                      std::move(covariate_names));
}

inline void write_dataset(const Dataset& d, const std::string& expression_path,
                          const std::string& phenotype_path,
                          const std::string& covariate_path = "") {
  {
    TsvWriter w(expression_path);
    w.field("gene_id");
    for (const auto& s : d.sample_ids) w.field(s);
    w.endrow();
    for (Index j = 0; j < d.p(); ++j) {
      w.field(d.gene_ids[static_cast<std::size_t>(j)]);
      for (Index i = 0; i < d.n(); ++i) w.field(d.expression(j, i));
      w.endrow();
    }
    w.close();
  }
  {
    TsvWriter w(phenotype_path);
    w.field("sample_id");
    for (const auto& s : d.phenotype_names) w.field(s);
    w.endrow();
    for (Index i = 0; i < d.n(); ++i) {
      w.field(d.sample_ids[static_cast<std::size_t>(i)]);
      for (Index k = 0; k < d.K(); ++k) w.field(d.phenotypes(i, k));
      w.endrow();
    }
    w.close();
  }
  if (!covariate_path.empty() && d.M() > 0) {
    TsvWriter w(covariate_path);
    w.field("sample_id");
    for (const auto& s : d.covariate_names) w.field(s);
    w.endrow();
    for (Index i = 0; i < d.n(); ++i) {
      w.field(d.sample_ids[static_cast<std::size_t>(i)]);
      for (Index m = 0; m < d.M(); ++m) w.field(d.covariates(i, m));
      w.endrow();
    }
    w.close();
  }
}

// Non-fatal checks. The (B, alpha) overload also flags permutation counts too
// small for the requested significance target.
inline std::vector<std::string> validate(const Dataset& d, int B = 0, double alpha = 0.0) {
  std::vector<std::string> warnings;
  for (Index j = 0; j < d.p(); ++j) {
    const auto row = d.expression.row(j);
    const double mean = row.mean();
    const double var = (row.array() - mean).square().sum() / static_cast<double>(d.n());
    if (var < 1e-12)
      warnings.push_back("zero-variance gene '" + d.gene_ids[static_cast<std::size_t>(j)] +
                         "' (variance < 1e-12)");
  }
  if (d.K() > kRecommendedMaxPhenotypes)
    warnings.push_back("K=" + std::to_string(d.K()) +
                       " phenotypes; the number of phenotypes is recommended to be below " +
                       std::to_string(kRecommendedMaxPhenotypes) +
                       " for computational consideration");
  if (B > 0 && alpha > 0.0) {
    const double resolution = 1.0 / (static_cast<double>(B) * static_cast<double>(d.p()));
    const double per_gene = alpha / static_cast<double>(d.p());
    if (per_gene < resolution)
      warnings.push_back("significance target " + format_double(per_gene) +
                         " is below the permutation resolution " + format_double(resolution) +
                         " (B=" + std::to_string(B) + "); increase --perms");
  }
  return warnings;
}

enum class CellFlag : std::uint8_t {
  ok = 0,
  fit_error = 1,            // per-cell fit failed; p = 1, sign = 0
  degenerate_residual = 2,  // zero residual sum of squares; p floored
  separation = 3,           // |theta| ran away in the Poisson fit; p floored
  not_converged = 4,        // IRLS hit the iteration cap; best iterate kept
};

// Observed association p-values and coefficient signs, plus per-cell flags.
struct PValueMatrix {
  Eigen::MatrixXd values;                                    // p x K in (0, 1]
  Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic> signs;   // {-1,0,1}
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> flags;  // CellFlag
  std::vector<std::string> gene_ids;
  std::vector<std::string> phenotype_names;

  Index p() const { return values.rows(); }
  Index K() const { return values.cols(); }
};

inline void write_pvalue_matrix(const PValueMatrix& m, const std::string& path) {
  TsvWriter w(path);
  w.field("gene_id");
  for (const auto& s : m.phenotype_names) w.field("p_" + s);
  for (const auto& s : m.phenotype_names) w.field("sign_" + s);
  w.endrow();
  for (Index j = 0; j < m.p(); ++j) {
    w.field(m.gene_ids[static_cast<std::size_t>(j)]);
    for (Index k = 0; k < m.K(); ++k) w.field(m.values(j, k));
    for (Index k = 0; k < m.K(); ++k) w.field(static_cast<long long>(m.signs(j, k)));
    w.endrow();
  }
  w.close();
}

inline PValueMatrix load_pvalue_matrix(const std::string& path) {
  const TsvTable t = read_tsv(path);
  if (t.header.size() < 3 || (t.header.size() - 1) % 2 != 0)
    throw IoError("unexpected p-value table shape in " + path);
  const Index K = static_cast<Index>((t.header.size() - 1) / 2);
  const Index p = static_cast<Index>(t.rows.size());
  PValueMatrix m;
  m.values.resize(p, K);
  m.signs.resize(p, K);
  m.flags = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>::Zero(p, K);
  for (Index k = 0; k < K; ++k) {
    std::string name = t.header[static_cast<std::size_t>(k) + 1];
    if (name.rfind("p_", 0) == 0) name = name.substr(2);
    m.phenotype_names.push_back(name);
  }
  for (Index j = 0; j < p; ++j) {
    const auto& row = t.rows[static_cast<std::size_t>(j)];
    if (static_cast<Index>(row.size()) != 2 * K + 1)
      throw IoError("short row in " + path);
    m.gene_ids.push_back(row[0]);
    for (Index k = 0; k < K; ++k) {
      m.values(j, k) = parse_double(row[static_cast<std::size_t>(k + 1)], "in " + path);
      m.signs(j, k) = static_cast<std::int8_t>(
          parse_double(row[static_cast<std::size_t>(K + k + 1)], "in " + path));
    }
  }
  return m;
}

}  // namespace afcomb
