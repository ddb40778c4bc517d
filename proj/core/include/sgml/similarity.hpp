#pragma once

#include <span>

#include "sgml/matrix.hpp"

namespace sgml {

/// Lower/upper clamp applied to predicted attribute probabilities. Shared by
/// the attribute head, BCE and the SGS mapping so that a model-produced
/// probability vector can never have zero norm.
inline constexpr double kProbClamp = 1e-7;

/// u.v / (|u| |v|). Throws DomainError on length mismatch, empty input or a
/// zero-norm argument. The result is not clamped; it lies in [-1, 1] up to
/// rounding.
double cosine_similarity(std::span<const double> u, std::span<const double> v);

/// Gradient of cosine_similarity(u, v) with respect to u, written into
/// `out` (same length as u):  v / (|u||v|) - s * u / |u|^2.
void cosine_gradient(std::span<const double> u, std::span<const double> v,
                     std::span<double> out);

/// Semantic granularity similarity between two attribute-probability
/// vectors: the cosine of the two vectors. Entries must lie in [0, 1], which
/// keeps the result in [0, 1]. An all-zero vector is a DomainError.
double sgs_mapping(std::span<const double> p, std::span<const double> q);

/// Copy of `rows` with 1e-12 added to the first coordinate of every
/// all-zero row, so cosine stays defined for dead-ReLU outputs.
Matrix nudge_zero_rows(const Matrix& rows);

/// Pairwise cosine similarities between the rows of `rows`. Errors name the
/// offending row.
Matrix similarity_matrix(const Matrix& rows);

}  // namespace sgml
