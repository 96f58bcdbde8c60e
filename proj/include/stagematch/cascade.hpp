#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "stagematch/core.hpp"
#include "stagematch/error.hpp"

namespace stagematch {

// Cumulative stage boundaries over a feature vector: stage k covers
// dimensions [0, boundaries[k]). Boundaries are strictly increasing and the
// last one equals the full dimensionality.
struct StagePlan {
  std::vector<std::size_t> boundaries;

  std::size_t dim() const noexcept {
    return boundaries.empty() ? 0 : boundaries.back();
  }
  std::size_t stage_count() const noexcept { return boundaries.size(); }
};

inline void validate_stage_plan(const StagePlan& plan) {
  if (plan.boundaries.empty()) {
    raise(ErrorKind::invalid_argument, "stage plan has no stages");
  }
  std::size_t prev = 0;
  for (std::size_t b : plan.boundaries) {
    if (b <= prev) {
      raise(ErrorKind::invalid_argument,
            "stage boundaries must be strictly increasing and positive");
    }
    prev = b;
  }
}

// Halving plan: boundary k is floor(d / 2^(stage_count-1-k)), so each stage
// roughly doubles the prefix and the last stage covers all of d. Fails if d
// is too small for the requested depth (leading boundary would be zero).
inline StagePlan make_stage_plan(std::size_t d, std::size_t stage_count) {
  if (d == 0) {
    raise(ErrorKind::invalid_argument, "stage plan: dimension must be >= 1");
  }
  if (stage_count == 0) {
    raise(ErrorKind::invalid_argument,
          "stage plan: stage count must be >= 1");
  }
  if (stage_count > 63) {
    raise(ErrorKind::invalid_argument, "stage plan: stage count too large");
  }
  StagePlan plan;
  plan.boundaries.resize(stage_count);
  for (std::size_t k = 0; k < stage_count; ++k) {
    plan.boundaries[k] = d >> (stage_count - 1 - k);
  }
  validate_stage_plan(plan);  // rejects d < 2^(stage_count-1)
  return plan;
}

// Learned cascade: one rejection threshold and one target retention rate
// (the fraction of genuine pairs meant to survive) per stage.
struct CascadeModel {
  StagePlan plan;
  std::vector<double> thresholds;
  std::vector<double> target_vrs;
  std::uint64_t train_count = 0;
};

inline void validate_model(const CascadeModel& model) {
  validate_stage_plan(model.plan);
  std::size_t stages = model.plan.stage_count();
  if (model.thresholds.size() != stages) {
    raise(ErrorKind::invalid_argument,
          "model has " + std::to_string(model.thresholds.size()) +
              " thresholds for " + std::to_string(stages) + " stages");
  }
  if (model.target_vrs.size() != stages) {
    raise(ErrorKind::invalid_argument,
          "model has " + std::to_string(model.target_vrs.size()) +
              " retention targets for " + std::to_string(stages) + " stages");
  }
  for (std::size_t k = 0; k < stages; ++k) {
    double bound = static_cast<double>(model.plan.boundaries[k]);
    if (!std::isfinite(model.thresholds[k]) ||
        model.thresholds[k] < -bound || model.thresholds[k] > bound) {
      raise(ErrorKind::invalid_argument,
            "threshold " + std::to_string(k) + " outside [-" +
                std::to_string(model.plan.boundaries[k]) + ", " +
                std::to_string(model.plan.boundaries[k]) + "]");
    }
    if (!(model.target_vrs[k] > 0.0) || model.target_vrs[k] > 1.0) {
      raise(ErrorKind::invalid_argument,
            "retention target " + std::to_string(k) + " outside (0, 1]");
    }
  }
}

// Geometric retention schedule: stage k targets base^(k+1) of genuine pairs,
// so the product of per-stage losses stays bounded across the cascade.
inline std::vector<double> default_vr_schedule(std::size_t stage_count,
                                               double base = 0.999) {
  if (stage_count == 0) {
    raise(ErrorKind::invalid_argument, "retention schedule: no stages");
  }
  if (!(base > 0.0) || base > 1.0) {
    raise(ErrorKind::invalid_argument,
          "retention schedule: base outside (0, 1]");
  }
  std::vector<double> vrs(stage_count);
  double v = 1.0;
  for (std::size_t k = 0; k < stage_count; ++k) {
    v *= base;
    vrs[k] = v;
  }
  return vrs;
}

// Learns per-stage thresholds from genuine pair samples. For each stage the
// threshold is the q-th largest cumulative prefix score with q =
// ceil(target_vr * n): an exact order statistic, so at least that fraction
// of the training pairs scores >= the threshold at every stage. Retention is
// measured against all n pairs at every stage (no re-filtering by earlier
// stages), which keeps the quantile estimates independent of cascade order.
inline CascadeModel learn_thresholds(const std::vector<PairSample>& positives,
                                     const StagePlan& plan,
                                     const std::vector<double>& target_vrs) {
  validate_stage_plan(plan);
  std::size_t stages = plan.stage_count();
  std::size_t d = plan.dim();
  std::size_t n = positives.size();
  if (n == 0) {
    raise(ErrorKind::invalid_argument, "threshold learning: no samples");
  }
  if (target_vrs.size() != stages) {
    raise(ErrorKind::invalid_argument,
          "threshold learning: " + std::to_string(target_vrs.size()) +
              " retention targets for " + std::to_string(stages) + " stages");
  }
  for (double v : target_vrs) {
    if (!(v > 0.0) || v > 1.0) {
      raise(ErrorKind::invalid_argument,
            "threshold learning: retention target outside (0, 1]");
    }
  }
  for (const PairSample& s : positives) {
    if (s.dim() != d) {
      raise(ErrorKind::dimension_mismatch,
            "threshold learning: sample dimension " + std::to_string(s.dim()) +
                " does not match plan dimension " + std::to_string(d));
    }
    if (!s.is_genuine) {
      raise(ErrorKind::invalid_argument,
            "threshold learning: impostor sample in training set");
    }
  }

  CascadeModel model;
  model.plan = plan;
  model.target_vrs = target_vrs;
  model.train_count = n;
  model.thresholds.resize(stages);

  // One running cumulative score per sample, advanced stage by stage in the
  // same sequential order the matcher uses.
  std::vector<double> cumulative(n, 0.0);
  std::vector<double> sorted(n);
  std::size_t start = 0;
  for (std::size_t k = 0; k < stages; ++k) {
    std::size_t stop = plan.boundaries[k];
    for (std::size_t j = 0; j < n; ++j) {
      const double* values = positives[j].values.data();
      double sum = cumulative[j];
      for (std::size_t i = start; i < stop; ++i) sum += values[i];
      cumulative[j] = sum;
    }
    start = stop;

    double quota = target_vrs[k] * static_cast<double>(n);
    std::size_t q = static_cast<std::size_t>(std::ceil(quota));
    q = std::clamp<std::size_t>(q, 1, n);

    sorted = cumulative;
    std::nth_element(sorted.begin(), sorted.begin() + (q - 1), sorted.end(),
                     std::greater<double>());
    model.thresholds[k] = sorted[q - 1];
  }
  return model;
}

// Outcome of matching one template pair through the cascade.
struct MatchResult {
  double score = 0.0;             // partial score if rejected, full cosine if not
  std::size_t stages_passed = 0;  // number of stage tests passed
  bool rejected = false;
  std::optional<std::size_t> rejected_at;  // stage index of the failed test
};

namespace detail {

// Core staged comparison. Accumulates the inner product strictly in index
// order and tests it against the stage threshold at each boundary; a partial
// score below threshold stops the scan. With all stage tests passing, the
// accumulator equals cosine() on the same pair bit for bit. When kCounted is
// set, every multiply-add increments *mult_adds; the flag is a template
// parameter so timed runs carry no counter work at all.
template <bool kCounted>
MatchResult cascade_match_impl(const float* x, const float* y,
                               const CascadeModel& model,
                               std::uint64_t* mult_adds) noexcept {
  const std::size_t* bounds = model.plan.boundaries.data();
  const double* thresholds = model.thresholds.data();
  const std::size_t stages = model.plan.boundaries.size();

  double sum = 0.0;
  std::size_t i = 0;
  for (std::size_t k = 0; k < stages; ++k) {
    const std::size_t stop = bounds[k];
    for (; i < stop; ++i) {
      sum += static_cast<double>(x[i]) * static_cast<double>(y[i]);
      if constexpr (kCounted) ++*mult_adds;
    }
    if (sum < thresholds[k]) {
      return MatchResult{sum, k, true, k};
    }
  }
  return MatchResult{sum, stages, false, std::nullopt};
}

inline void check_match_dims(std::size_t xd, std::size_t yd,
                             const CascadeModel& model) {
  if (xd != yd || xd != model.plan.dim()) {
    raise(ErrorKind::dimension_mismatch,
          "cascade match: dimensions " + std::to_string(xd) + "/" +
              std::to_string(yd) + " do not match plan dimension " +
              std::to_string(model.plan.dim()));
  }
}

}  // namespace detail

inline MatchResult cascade_match(std::span<const float> x,
                                 std::span<const float> y,
                                 const CascadeModel& model) {
  detail::check_match_dims(x.size(), y.size(), model);
  return detail::cascade_match_impl<false>(x.data(), y.data(), model, nullptr);
}

// Same comparison, but counts every multiply-add into mult_adds.
inline MatchResult cascade_match_counted(std::span<const float> x,
                                         std::span<const float> y,
                                         const CascadeModel& model,
                                         std::uint64_t& mult_adds) {
  detail::check_match_dims(x.size(), y.size(), model);
  return detail::cascade_match_impl<true>(x.data(), y.data(), model,
                                          &mult_adds);
}

struct RankedMatch {
  std::string id;
  std::size_t gallery_index = 0;
  MatchResult result;
};

// Ranking order: more stages passed wins, then higher score, then lower
// gallery index. Survivors carry stages_passed == stage_count, so they always
// outrank rejected candidates regardless of partial scores.
inline bool ranks_before(const MatchResult& a, std::size_t index_a,
                         const MatchResult& b, std::size_t index_b) noexcept {
  if (a.stages_passed != b.stages_passed) {
    return a.stages_passed > b.stages_passed;
  }
  if (a.score != b.score) return a.score > b.score;
  return index_a < index_b;
}

// Matches the probe against every gallery template and returns the top_k
// candidates in ranking order. Results are deterministic for any worker
// count: workers fill disjoint index ranges and the final ordering is a pure
// function of the per-candidate results.
inline std::vector<RankedMatch> identify(const Template& probe,
                                         const std::vector<Template>& gallery,
                                         const CascadeModel& model,
                                         std::size_t top_k,
                                         unsigned worker_count = 1) {
  if (gallery.empty()) {
    raise(ErrorKind::invalid_argument, "identify: empty gallery");
  }
  if (top_k == 0) {
    raise(ErrorKind::invalid_argument, "identify: top_k must be >= 1");
  }
  std::size_t d = model.plan.dim();
  if (probe.dim() != d) {
    raise(ErrorKind::dimension_mismatch,
          "identify: probe dimension " + std::to_string(probe.dim()) +
              " does not match plan dimension " + std::to_string(d));
  }
  for (const Template& t : gallery) {
    if (t.dim() != d) {
      raise(ErrorKind::dimension_mismatch,
            "identify: gallery template '" + t.id + "' has dimension " +
                std::to_string(t.dim()) + ", expected " + std::to_string(d));
    }
  }

  std::size_t n = gallery.size();
  std::vector<MatchResult> results(n);
  const float* probe_data = probe.features.data();

  auto run_range = [&](std::size_t begin, std::size_t end) noexcept {
    for (std::size_t g = begin; g < end; ++g) {
      results[g] = detail::cascade_match_impl<false>(
          probe_data, gallery[g].features.data(), model, nullptr);
    }
  };

  std::size_t workers = std::max<std::size_t>(1, worker_count);
  workers = std::min(workers, n);
  if (workers == 1) {
    run_range(0, n);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      std::size_t begin = w * chunk;
      std::size_t end = std::min(n, begin + chunk);
      if (begin >= end) break;
      pool.emplace_back(run_range, begin, end);
    }
    for (std::thread& t : pool) t.join();
  }

  std::vector<std::size_t> order(n);
  for (std::size_t g = 0; g < n; ++g) order[g] = g;
  std::size_t keep = std::min(top_k, n);
  std::partial_sort(order.begin(), order.begin() + keep, order.end(),
                    [&](std::size_t a, std::size_t b) {
                      return ranks_before(results[a], a, results[b], b);
                    });

  std::vector<RankedMatch> ranked;
  ranked.reserve(keep);
  for (std::size_t r = 0; r < keep; ++r) {
    std::size_t g = order[r];
    ranked.push_back(RankedMatch{gallery[g].id, g, results[g]});
  }
  return ranked;
}

// Keeps the leading keep_stages stages of a learned model. Thresholds and
// retention targets of the surviving stages are unchanged.
inline CascadeModel truncate_model(const CascadeModel& model,
                                   std::size_t keep_stages) {
  validate_model(model);
  std::size_t stages = model.plan.stage_count();
  if (keep_stages == 0 || keep_stages > stages) {
    raise(ErrorKind::invalid_argument,
          "truncate: keep_stages " + std::to_string(keep_stages) +
              " outside [1, " + std::to_string(stages) + "]");
  }
  CascadeModel out;
  out.plan.boundaries.assign(model.plan.boundaries.begin(),
                             model.plan.boundaries.begin() + keep_stages);
  out.thresholds.assign(model.thresholds.begin(),
                        model.thresholds.begin() + keep_stages);
  out.target_vrs.assign(model.target_vrs.begin(),
                        model.target_vrs.begin() + keep_stages);
  out.train_count = model.train_count;
  return out;
}

// Keeps the leading new_dim features and re-normalizes to unit length.
// new_dim == dim() returns the template unchanged.
inline Template truncate_template(const Template& t, std::size_t new_dim) {
  if (new_dim == 0 || new_dim > t.dim()) {
    raise(ErrorKind::invalid_argument,
          "truncate: new dimension " + std::to_string(new_dim) +
              " outside [1, " + std::to_string(t.dim()) + "]");
  }
  if (new_dim == t.dim()) return t;
  std::span<const float> prefix(t.features.data(), new_dim);
  double norm = detail::checked_norm(prefix);
  Template out;
  out.id = t.id;
  out.features.resize(new_dim);
  for (std::size_t i = 0; i < new_dim; ++i) {
    out.features[i] =
        static_cast<float>(static_cast<double>(t.features[i]) / norm);
  }
  return out;
}

}  // namespace stagematch
