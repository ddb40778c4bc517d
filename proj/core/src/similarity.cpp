#include "sgml/similarity.hpp"

#include <cmath>
#include <string>

#include "sgml/errors.hpp"

namespace sgml {

namespace {

struct DotNorms {
  double dot = 0.0;
  double uu = 0.0;
  double vv = 0.0;
};

DotNorms accumulate(std::span<const double> u, std::span<const double> v,
                    const char* what) {
  if (u.size() != v.size()) {
    throw DomainError(std::string(what) + ": length mismatch (" +
                      std::to_string(u.size()) + " vs " + std::to_string(v.size()) + ")");
  }
  if (u.empty()) throw DomainError(std::string(what) + ": empty vector");
  DotNorms acc;
  for (std::size_t i = 0; i < u.size(); ++i) {
    acc.dot += u[i] * v[i];
    acc.uu += u[i] * u[i];
    acc.vv += v[i] * v[i];
  }
  if (!(acc.uu > 0.0) || !(acc.vv > 0.0)) {
    throw DomainError(std::string(what) + ": zero-norm vector");
  }
  return acc;
}

}  // namespace

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  const DotNorms acc = accumulate(u, v, "cosine_similarity");
  return acc.dot / (std::sqrt(acc.uu) * std::sqrt(acc.vv));
}

void cosine_gradient(std::span<const double> u, std::span<const double> v,
                     std::span<double> out) {
  const DotNorms acc = accumulate(u, v, "cosine_gradient");
  if (out.size() != u.size()) throw DomainError("cosine_gradient: output length mismatch");
  const double nu = std::sqrt(acc.uu);
  const double nv = std::sqrt(acc.vv);
  const double s = acc.dot / (nu * nv);
  const double inv_prod = 1.0 / (nu * nv);
  const double s_over_uu = s / acc.uu;
  for (std::size_t i = 0; i < u.size(); ++i) {
    out[i] = v[i] * inv_prod - s_over_uu * u[i];
  }
}

double sgs_mapping(std::span<const double> p, std::span<const double> q) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(p[i] >= 0.0 && p[i] <= 1.0)) throw DomainError("sgs_mapping: entry outside [0,1]");
  }
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (!(q[i] >= 0.0 && q[i] <= 1.0)) throw DomainError("sgs_mapping: entry outside [0,1]");
  }
  const DotNorms acc = accumulate(p, q, "sgs_mapping");
  return acc.dot / (std::sqrt(acc.uu) * std::sqrt(acc.vv));
}

Matrix nudge_zero_rows(const Matrix& rows) {
  Matrix out = rows;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    if (out.cols() > 0 && out.row(r).squaredNorm() == 0.0) out(r, 0) += 1e-12;
  }
  return out;
}

Matrix similarity_matrix(const Matrix& rows) {
  const Eigen::Index n = rows.rows();
  if (n < 1) throw DomainError("similarity_matrix: no vectors");
  Matrix out(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i; j < n; ++j) {
      double s = 0.0;
      try {
        s = cosine_similarity(row_span(rows, i), row_span(rows, j));
      } catch (const DomainError& e) {
        throw DomainError("similarity_matrix: rows " + std::to_string(i) + "," +
                          std::to_string(j) + ": " + e.what());
      }
      out(i, j) = s;
      out(j, i) = s;
    }
  }
  return out;
}

}  // namespace sgml
