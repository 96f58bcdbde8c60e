#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "stagematch/core.hpp"
#include "stagematch/error.hpp"

namespace stagematch {

// Row-major labeled feature matrix: sample i is features[i*dim_raw ..
// (i+1)*dim_raw) with identity labels[i].
struct LabeledDataset {
  std::size_t dim_raw = 0;
  std::vector<double> features;
  std::vector<std::string> labels;

  std::size_t sample_count() const noexcept { return labels.size(); }

  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(features.data() + i * dim_raw, dim_raw);
  }
};

inline void validate_dataset(const LabeledDataset& data) {
  if (data.dim_raw == 0) {
    raise(ErrorKind::invalid_argument, "dataset has zero feature dimension");
  }
  if (data.labels.empty()) {
    raise(ErrorKind::invalid_argument, "dataset has no samples");
  }
  if (data.features.size() != data.labels.size() * data.dim_raw) {
    raise(ErrorKind::invalid_argument,
          "dataset feature buffer does not match sample count x dimension");
  }
  for (const std::string& label : data.labels) {
    if (label.empty()) {
      raise(ErrorKind::invalid_argument, "dataset contains an empty label");
    }
  }
}

// Distinct labels in first-appearance order with their member sample indices.
struct ClassIndex {
  std::vector<std::string> labels;
  std::vector<std::vector<std::size_t>> members;

  std::size_t class_count() const noexcept { return labels.size(); }
};

inline ClassIndex group_by_label(const LabeledDataset& data) {
  ClassIndex index;
  std::unordered_map<std::string, std::size_t> seen;
  seen.reserve(data.labels.size());
  for (std::size_t i = 0; i < data.labels.size(); ++i) {
    auto [it, inserted] = seen.emplace(data.labels[i], index.labels.size());
    if (inserted) {
      index.labels.push_back(data.labels[i]);
      index.members.emplace_back();
    }
    index.members[it->second].push_back(i);
  }
  return index;
}

// Discriminant projection: basis columns ordered by descending eigenvalue
// (discriminability of the projected dimension). Applying it and then
// unit-normalizing yields match-ready feature vectors.
struct LdaProjection {
  std::size_t dim_raw = 0;
  std::size_t dim_out = 0;
  std::vector<double> mean;         // dim_raw
  std::vector<double> basis;        // row-major dim_raw x dim_out
  std::vector<double> eigenvalues;  // dim_out, non-increasing, >= 0
};

inline void validate_projection(const LdaProjection& p) {
  if (p.dim_raw == 0 || p.dim_out == 0) {
    raise(ErrorKind::invalid_argument, "projection has zero dimension");
  }
  if (p.dim_out > p.dim_raw) {
    raise(ErrorKind::invalid_argument,
          "projection output dimension exceeds input dimension");
  }
  if (p.mean.size() != p.dim_raw ||
      p.basis.size() != p.dim_raw * p.dim_out ||
      p.eigenvalues.size() != p.dim_out) {
    raise(ErrorKind::invalid_argument, "projection field sizes inconsistent");
  }
  for (std::size_t j = 0; j < p.dim_out; ++j) {
    double v = p.eigenvalues[j];
    if (!std::isfinite(v) || v < -1e-9) {
      raise(ErrorKind::invalid_argument,
            "projection eigenvalue " + std::to_string(j) + " negative");
    }
    if (j > 0 && v > p.eigenvalues[j - 1]) {
      raise(ErrorKind::invalid_argument,
            "projection eigenvalues not non-increasing");
    }
  }
}

namespace detail {

using RowMajorMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace detail

// Fits a Fisher discriminant basis. The generalized eigenproblem is solved
// by PCA-whitening the within-class scatter (components with eigenvalue
// below 1e-10 x trace are dropped) and eigen-decomposing the whitened
// between-class scatter. Between-class scatter is class-size weighted:
// sum_c n_c (mu_c - mu)(mu_c - mu)^T. Each basis column's largest-magnitude
// entry is made positive so refits are reproducible across eigen-solvers.
inline LdaProjection fit_lda(const LabeledDataset& data, std::size_t dim_out) {
  validate_dataset(data);
  ClassIndex classes = group_by_label(data);
  const std::size_t n = data.sample_count();
  const std::size_t d = data.dim_raw;
  const std::size_t c = classes.class_count();

  if (c < 2) {
    raise(ErrorKind::invalid_argument, "fit_lda: needs at least 2 classes");
  }
  for (std::size_t ci = 0; ci < c; ++ci) {
    if (classes.members[ci].size() < 2) {
      raise(ErrorKind::invalid_argument,
            "fit_lda: class '" + classes.labels[ci] +
                "' has fewer than 2 samples");
    }
  }
  if (n <= c) {
    raise(ErrorKind::invalid_argument,
          "fit_lda: sample count must exceed class count");
  }
  if (dim_out == 0) {
    raise(ErrorKind::invalid_argument, "fit_lda: dim_out must be >= 1");
  }
  if (dim_out > std::min(c - 1, d)) {
    raise(ErrorKind::invalid_argument,
          "fit_lda: dim_out " + std::to_string(dim_out) +
              " exceeds min(class_count - 1, dim_raw) = " +
              std::to_string(std::min(c - 1, d)));
  }

  Eigen::Map<const detail::RowMajorMatrix> x(data.features.data(),
                                             static_cast<Eigen::Index>(n),
                                             static_cast<Eigen::Index>(d));
  Eigen::VectorXd mu = x.colwise().mean().transpose();

  detail::RowMajorMatrix centered(n, d);
  Eigen::MatrixXd between(c, d);
  for (std::size_t ci = 0; ci < c; ++ci) {
    const auto& members = classes.members[ci];
    Eigen::VectorXd class_mean = Eigen::VectorXd::Zero(d);
    for (std::size_t idx : members) {
      class_mean += x.row(static_cast<Eigen::Index>(idx)).transpose();
    }
    class_mean /= static_cast<double>(members.size());
    for (std::size_t idx : members) {
      centered.row(static_cast<Eigen::Index>(idx)) =
          x.row(static_cast<Eigen::Index>(idx)) - class_mean.transpose();
    }
    between.row(static_cast<Eigen::Index>(ci)) =
        std::sqrt(static_cast<double>(members.size())) *
        (class_mean - mu).transpose();
  }

  Eigen::MatrixXd scatter_within = centered.transpose() * centered;
  Eigen::MatrixXd scatter_between = between.transpose() * between;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> within_eig(scatter_within);
  if (within_eig.info() != Eigen::Success) {
    raise(ErrorKind::invalid_argument,
          "fit_lda: within-class eigendecomposition failed");
  }
  const Eigen::VectorXd& within_vals = within_eig.eigenvalues();  // ascending
  double trace = scatter_within.trace();
  if (!(trace > 0.0)) {
    raise(ErrorKind::invalid_argument,
          "fit_lda: no within-class variation (zero scatter)");
  }
  double cutoff = 1e-10 * trace;
  std::vector<Eigen::Index> kept;  // descending eigenvalue order
  for (Eigen::Index i = static_cast<Eigen::Index>(d) - 1; i >= 0; --i) {
    if (within_vals[i] >= cutoff) kept.push_back(i);
  }
  if (kept.size() < dim_out) {
    raise(ErrorKind::invalid_argument,
          "fit_lda: rank-deficient data, only " +
              std::to_string(kept.size()) + " usable directions for dim_out " +
              std::to_string(dim_out));
  }

  Eigen::MatrixXd whitener(d, kept.size());
  for (std::size_t j = 0; j < kept.size(); ++j) {
    whitener.col(static_cast<Eigen::Index>(j)) =
        within_eig.eigenvectors().col(kept[j]) / std::sqrt(within_vals[kept[j]]);
  }

  Eigen::MatrixXd reduced =
      whitener.transpose() * scatter_between * whitener;
  reduced = 0.5 * (reduced + reduced.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> between_eig(reduced);
  if (between_eig.info() != Eigen::Success) {
    raise(ErrorKind::invalid_argument,
          "fit_lda: between-class eigendecomposition failed");
  }

  LdaProjection p;
  p.dim_raw = d;
  p.dim_out = dim_out;
  p.mean.assign(mu.data(), mu.data() + d);
  p.basis.resize(d * dim_out);
  p.eigenvalues.resize(dim_out);

  const Eigen::Index rank = reduced.rows();
  for (std::size_t j = 0; j < dim_out; ++j) {
    Eigen::Index src = rank - 1 - static_cast<Eigen::Index>(j);
    Eigen::VectorXd column = whitener * between_eig.eigenvectors().col(src);

    Eigen::Index peak = 0;
    double peak_abs = 0.0;
    for (Eigen::Index i = 0; i < column.size(); ++i) {
      double a = std::fabs(column[i]);
      if (a > peak_abs) {
        peak_abs = a;
        peak = i;
      }
    }
    if (column[peak] < 0.0) column = -column;

    for (std::size_t i = 0; i < d; ++i) {
      p.basis[i * dim_out + j] = column[static_cast<Eigen::Index>(i)];
    }
    p.eigenvalues[j] = std::max(0.0, between_eig.eigenvalues()[src]);
  }
  return p;
}

// Projects one raw vector: unit-normalized basis^T (x - mean). A vector that
// projects to zero (e.g. exactly the mean) is a normalization error.
inline std::vector<double> project(const LdaProjection& p,
                                   std::span<const double> x) {
  validate_projection(p);
  if (x.size() != p.dim_raw) {
    raise(ErrorKind::dimension_mismatch,
          "project: input dimension " + std::to_string(x.size()) +
              " does not match projection dim_raw " +
              std::to_string(p.dim_raw));
  }
  Eigen::Map<const Eigen::VectorXd> xv(x.data(),
                                       static_cast<Eigen::Index>(x.size()));
  Eigen::Map<const Eigen::VectorXd> mv(p.mean.data(),
                                       static_cast<Eigen::Index>(p.dim_raw));
  Eigen::Map<const detail::RowMajorMatrix> b(
      p.basis.data(), static_cast<Eigen::Index>(p.dim_raw),
      static_cast<Eigen::Index>(p.dim_out));
  Eigen::VectorXd y = b.transpose() * (xv - mv);
  std::vector<double> out(y.data(), y.data() + y.size());
  return normalize(std::span<const double>(out));
}

// Batched projection of row-major raw vectors; each output row is
// unit-normalized. Row count x dim_out doubles are returned row-major.
inline std::vector<double> project_rows(const LdaProjection& p,
                                        std::span<const double> rows,
                                        std::size_t count) {
  validate_projection(p);
  if (rows.size() != count * p.dim_raw) {
    raise(ErrorKind::dimension_mismatch,
          "project_rows: buffer size does not match count x dim_raw");
  }
  if (count == 0) return {};

  Eigen::Map<const detail::RowMajorMatrix> x(
      rows.data(), static_cast<Eigen::Index>(count),
      static_cast<Eigen::Index>(p.dim_raw));
  Eigen::Map<const Eigen::RowVectorXd> mv(
      p.mean.data(), static_cast<Eigen::Index>(p.dim_raw));
  Eigen::Map<const detail::RowMajorMatrix> b(
      p.basis.data(), static_cast<Eigen::Index>(p.dim_raw),
      static_cast<Eigen::Index>(p.dim_out));

  detail::RowMajorMatrix y = (x.rowwise() - mv) * b;
  std::vector<double> out(count * p.dim_out);
  for (std::size_t i = 0; i < count; ++i) {
    std::span<const double> row(y.data() + i * p.dim_out, p.dim_out);
    std::vector<double> unit;
    try {
      unit = normalize(row);
    } catch (const Error&) {
      raise(ErrorKind::normalization,
            "project_rows: sample " + std::to_string(i) +
                " projects to the zero vector");
    }
    std::copy(unit.begin(), unit.end(), out.begin() + i * p.dim_out);
  }
  return out;
}

}  // namespace stagematch
