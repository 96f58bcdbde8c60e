#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stagematch/error.hpp"

namespace stagematch {

// Norm drift tolerated on freshly built templates (float storage of a
// double-normalized vector stays well inside this).
inline constexpr double kTemplateNormTolerance = 1e-6;

// Looser bound applied when validating templates loaded from disk.
inline constexpr double kStoredNormTolerance = 1e-5;

// A unit-normalized feature vector tagged with the identity it belongs to.
// Features are stored as float; all score arithmetic happens in double.
struct Template {
  std::string id;
  std::vector<float> features;

  std::size_t dim() const noexcept { return features.size(); }
};

// Element-wise product of a genuine or impostor template pair. Values are
// kept in double so that partial sums over them reproduce the matcher's
// accumulation exactly (a float*float product is exact in double).
struct PairSample {
  std::vector<double> values;
  bool is_genuine = false;

  std::size_t dim() const noexcept { return values.size(); }
};

template <typename T>
bool all_finite(std::span<const T> x) noexcept {
  for (T v : x) {
    if (!std::isfinite(static_cast<double>(v))) return false;
  }
  return true;
}

template <typename T>
double l2_norm(std::span<const T> x) noexcept {
  double sum = 0.0;
  for (T v : x) {
    double d = static_cast<double>(v);
    sum += d * d;
  }
  return std::sqrt(sum);
}

namespace detail {

template <typename T>
double checked_norm(std::span<const T> x) {
  if (x.empty()) {
    raise(ErrorKind::invalid_argument, "cannot normalize an empty vector");
  }
  if (!all_finite(x)) {
    raise(ErrorKind::normalization, "vector has non-finite entries");
  }
  double norm = l2_norm(x);
  if (norm == 0.0) {
    raise(ErrorKind::normalization, "cannot normalize a zero vector");
  }
  if (!std::isfinite(norm)) {
    raise(ErrorKind::normalization, "vector norm overflows");
  }
  return norm;
}

}  // namespace detail

// Scales x to unit L2 norm. Zero or non-finite input is a normalization
// error; empty input is an invalid argument.
template <typename T>
std::vector<T> normalize(std::span<const T> x) {
  double norm = detail::checked_norm(x);
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = static_cast<T>(static_cast<double>(x[i]) / norm);
  }
  return out;
}

// Full inner product with strictly sequential double accumulation. On unit
// vectors this is the cosine similarity. The accumulation order here is the
// contract the staged matcher reproduces, so do not reorder it.
template <typename T>
double cosine(std::span<const T> x, std::span<const T> y) {
  if (x.size() != y.size()) {
    raise(ErrorKind::dimension_mismatch,
          "cosine: dimension mismatch (" + std::to_string(x.size()) + " vs " +
              std::to_string(y.size()) + ")");
  }
  if (x.empty()) {
    raise(ErrorKind::invalid_argument, "cosine: empty vectors");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sum += static_cast<double>(x[i]) * static_cast<double>(y[i]);
  }
  return sum;
}

// Normalizes raw features in double precision and stores the result as a
// float template.
template <typename T>
Template make_template(std::string id, std::span<const T> raw) {
  double norm = detail::checked_norm(raw);
  std::vector<float> features(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    features[i] = static_cast<float>(static_cast<double>(raw[i]) / norm);
  }
  return Template{std::move(id), std::move(features)};
}

inline bool is_unit_norm(std::span<const float> x, double tolerance) noexcept {
  if (x.empty() || !all_finite(x)) return false;
  return std::fabs(l2_norm(x) - 1.0) <= tolerance;
}

inline void validate_template(const Template& t,
                              double tolerance = kTemplateNormTolerance) {
  if (t.features.empty()) {
    raise(ErrorKind::invalid_argument, "template '" + t.id + "' is empty");
  }
  if (!is_unit_norm(std::span<const float>(t.features), tolerance)) {
    raise(ErrorKind::normalization,
          "template '" + t.id + "' is not unit-normalized");
  }
}

// Element-wise product of two unit templates. Partial sums of the result
// reproduce the matcher's stage scores bit for bit.
inline PairSample build_pair_sample(std::span<const float> x,
                                    std::span<const float> y,
                                    bool is_genuine) {
  if (x.size() != y.size()) {
    raise(ErrorKind::dimension_mismatch,
          "pair sample: dimension mismatch (" + std::to_string(x.size()) +
              " vs " + std::to_string(y.size()) + ")");
  }
  if (x.empty()) {
    raise(ErrorKind::invalid_argument, "pair sample: empty vectors");
  }
  PairSample sample;
  sample.is_genuine = is_genuine;
  sample.values.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    sample.values[i] =
        static_cast<double>(x[i]) * static_cast<double>(y[i]);
  }
  return sample;
}

}  // namespace stagematch
