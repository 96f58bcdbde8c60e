#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "stagematch/cascade.hpp"
#include "stagematch/core.hpp"
#include "stagematch/error.hpp"

// Measurement harness. Runs linear-scan and cascaded identification over
// identical data, reporting rank-1 agreement, per-stage rejection counts,
// exact work accounting, and wall-clock medians. Timed sections are
// single-threaded and counter-free; all bookkeeping happens in a separate
// untimed accounting pass (which also warms the cache).

namespace stagematch {

inline std::uint64_t fnv1a64(std::string_view s) noexcept {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string digest_hex(std::string_view s) {
  static const char* hex = "0123456789abcdef";
  std::uint64_t h = fnv1a64(s);
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = hex[h & 0xf];
    h >>= 4;
  }
  return out;
}

// Identifies the run that produced a report, for exact re-runs.
struct RunProvenance {
  std::uint64_t seed = 0;
  std::string config_digest;
};

struct BenchReport {
  std::size_t gallery_size = 0;
  std::size_t probe_count = 0;
  std::size_t dim = 0;
  std::size_t stage_count = 0;
  unsigned repeats = 0;

  double rank1_linear = 0.0;
  double rank1_cascade = 0.0;
  std::uint64_t rank1_disagreements = 0;
  // Probes whose complete gallery ordering coincides between the two
  // scans. Supplementary data: nothing asserts on it.
  std::uint64_t identical_rankings = 0;

  double total_time_linear = 0.0;   // seconds, median over repeats
  double total_time_cascade = 0.0;  // seconds, median over repeats
  double time_per_query = 0.0;      // cascade seconds per probe
  double speedup = 0.0;

  std::vector<std::uint64_t> stage_rejections;  // indexed by stage
  std::uint64_t survivors = 0;
  std::uint64_t counted_mult_adds = 0;   // literal per-multiply counter
  std::uint64_t expected_mult_adds = 0;  // histogram x stage sizes

  std::uint64_t seed = 0;
  std::string config_digest;
};

namespace detail {

inline void check_bench_inputs(const std::vector<Template>& gallery,
                               const std::vector<Template>& probes,
                               const CascadeModel& model) {
  validate_model(model);
  if (probes.empty()) {
    raise(ErrorKind::invalid_argument, "benchmark: empty probe set");
  }
  if (gallery.empty()) {
    raise(ErrorKind::invalid_argument, "benchmark: empty gallery");
  }
  std::size_t d = model.plan.dim();
  for (const Template& t : gallery) {
    if (t.dim() != d) {
      raise(ErrorKind::dimension_mismatch,
            "benchmark: gallery template '" + t.id + "' has dimension " +
                std::to_string(t.dim()) + ", model expects " +
                std::to_string(d));
    }
  }
  for (const Template& t : probes) {
    if (t.dim() != d) {
      raise(ErrorKind::dimension_mismatch,
            "benchmark: probe template '" + t.id + "' has dimension " +
                std::to_string(t.dim()) + ", model expects " +
                std::to_string(d));
    }
  }
}

inline double median_seconds(std::vector<double> samples) {
  std::sort(samples.begin(), samples.end());
  return samples[samples.size() / 2];  // upper middle for even counts
}

inline double elapsed_seconds(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                       start)
      .count();
}

// First strict maximum of the linear scores: identical tie handling to the
// ranked sort (higher score first, lower index on ties).
inline std::size_t linear_best(const std::vector<double>& scores) noexcept {
  std::size_t best = 0;
  for (std::size_t g = 1; g < scores.size(); ++g) {
    if (scores[g] > scores[best]) best = g;
  }
  return best;
}

}  // namespace detail

inline BenchReport run_benchmark(const std::vector<Template>& gallery,
                                 const std::vector<Template>& probes,
                                 const CascadeModel& model,
                                 unsigned repeats = 3,
                                 const RunProvenance& provenance = {}) {
  detail::check_bench_inputs(gallery, probes, model);
  if (repeats == 0) {
    raise(ErrorKind::invalid_argument, "benchmark: repeats must be >= 1");
  }

  const std::size_t n = gallery.size();
  const std::size_t p = probes.size();
  const std::size_t d = model.plan.dim();
  const std::size_t stages = model.plan.stage_count();

  BenchReport report;
  report.gallery_size = n;
  report.probe_count = p;
  report.dim = d;
  report.stage_count = stages;
  report.repeats = repeats;
  report.seed = provenance.seed;
  report.config_digest = provenance.config_digest;
  report.stage_rejections.assign(stages, 0);

  // Accounting pass: rank-1 agreement, rejection histogram, literal work
  // counting, and full-ranking comparison. Untimed; warms the cache.
  std::vector<double> linear_scores(n);
  std::vector<MatchResult> cascade_results(n);
  std::vector<std::size_t> linear_top(p), cascade_top(p);
  std::vector<std::size_t> order(n);
  std::size_t linear_hits = 0, cascade_hits = 0;

  for (std::size_t q = 0; q < p; ++q) {
    std::span<const float> probe(probes[q].features);
    for (std::size_t g = 0; g < n; ++g) {
      linear_scores[g] = cosine(probe, std::span<const float>(gallery[g].features));
    }
    std::size_t lbest = detail::linear_best(linear_scores);

    std::size_t cbest = 0;
    for (std::size_t g = 0; g < n; ++g) {
      MatchResult r = cascade_match_counted(
          probe, std::span<const float>(gallery[g].features), model,
          report.counted_mult_adds);
      if (r.rejected) {
        ++report.stage_rejections[*r.rejected_at];
      } else {
        ++report.survivors;
      }
      cascade_results[g] = r;
      if (g != 0 &&
          ranks_before(r, g, cascade_results[cbest], cbest)) {
        cbest = g;
      }
    }

    linear_top[q] = lbest;
    cascade_top[q] = cbest;
    linear_hits += (gallery[lbest].id == probes[q].id);
    cascade_hits += (gallery[cbest].id == probes[q].id);
    report.rank1_disagreements += (gallery[lbest].id != gallery[cbest].id);

    // Full-ranking agreement: sort by the linear key, then check the
    // cascade key is strictly decreasing along that order. Two strict
    // total orders are equal iff one's sorted sequence is sorted under
    // the other.
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (linear_scores[a] != linear_scores[b]) {
        return linear_scores[a] > linear_scores[b];
      }
      return a < b;
    });
    bool same = true;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      if (!ranks_before(cascade_results[order[i]], order[i],
                        cascade_results[order[i + 1]], order[i + 1])) {
        same = false;
        break;
      }
    }
    report.identical_rankings += same;
  }

  report.rank1_linear = static_cast<double>(linear_hits) / static_cast<double>(p);
  report.rank1_cascade =
      static_cast<double>(cascade_hits) / static_cast<double>(p);
  for (std::size_t k = 0; k < stages; ++k) {
    report.expected_mult_adds +=
        report.stage_rejections[k] * model.plan.boundaries[k];
  }
  report.expected_mult_adds += report.survivors * d;

  // Timed passes: counter-free, single-threaded, top-1 tracking only. The
  // per-probe winners are compared against the accounting pass afterwards,
  // which both sanity-checks determinism and keeps the loops from being
  // optimized away.
  std::vector<double> linear_times(repeats), cascade_times(repeats);
  std::vector<std::size_t> timed_top(p);

  for (unsigned r = 0; r < repeats; ++r) {
    auto start = std::chrono::steady_clock::now();
    for (std::size_t q = 0; q < p; ++q) {
      std::span<const float> probe(probes[q].features);
      std::size_t best = 0;
      double best_score = cosine(probe, std::span<const float>(gallery[0].features));
      for (std::size_t g = 1; g < n; ++g) {
        double s = cosine(probe, std::span<const float>(gallery[g].features));
        if (s > best_score) {
          best_score = s;
          best = g;
        }
      }
      timed_top[q] = best;
    }
    linear_times[r] = detail::elapsed_seconds(start);
    if (timed_top != linear_top) {
      raise(ErrorKind::invalid_argument,
            "benchmark: linear timing pass disagreed with accounting pass");
    }
  }

  for (unsigned r = 0; r < repeats; ++r) {
    auto start = std::chrono::steady_clock::now();
    for (std::size_t q = 0; q < p; ++q) {
      std::span<const float> probe(probes[q].features);
      std::size_t best = 0;
      MatchResult best_result =
          cascade_match(probe, std::span<const float>(gallery[0].features), model);
      for (std::size_t g = 1; g < n; ++g) {
        MatchResult res =
            cascade_match(probe, std::span<const float>(gallery[g].features), model);
        if (ranks_before(res, g, best_result, best)) {
          best_result = res;
          best = g;
        }
      }
      timed_top[q] = best;
    }
    cascade_times[r] = detail::elapsed_seconds(start);
    if (timed_top != cascade_top) {
      raise(ErrorKind::invalid_argument,
            "benchmark: cascade timing pass disagreed with accounting pass");
    }
  }

  report.total_time_linear = detail::median_seconds(linear_times);
  report.total_time_cascade = detail::median_seconds(cascade_times);
  report.time_per_query =
      report.total_time_cascade / static_cast<double>(p);
  report.speedup = report.total_time_cascade > 0.0
                       ? report.total_time_linear / report.total_time_cascade
                       : 0.0;
  return report;
}

struct TruncationPoint {
  std::size_t stages_kept = 0;
  std::size_t dim = 0;
  double rank1 = 0.0;
};

// Rank-1 of a plain linear scan after truncating model and templates to the
// leading k stages, for k = 1..stage_count.
inline std::vector<TruncationPoint> truncation_curve(
    const std::vector<Template>& gallery, const std::vector<Template>& probes,
    const CascadeModel& model) {
  detail::check_bench_inputs(gallery, probes, model);
  if (model.plan.stage_count() < 2) {
    raise(ErrorKind::invalid_argument,
          "truncation curve: model needs at least 2 stages");
  }

  std::vector<TruncationPoint> points;
  for (std::size_t k = 1; k <= model.plan.stage_count(); ++k) {
    CascadeModel kept = truncate_model(model, k);
    std::size_t dk = kept.plan.dim();

    std::vector<Template> cut_gallery;
    cut_gallery.reserve(gallery.size());
    for (const Template& t : gallery) {
      cut_gallery.push_back(truncate_template(t, dk));
    }

    std::size_t hits = 0;
    std::vector<double> scores(cut_gallery.size());
    for (const Template& probe : probes) {
      Template cut_probe = truncate_template(probe, dk);
      std::span<const float> pf(cut_probe.features);
      for (std::size_t g = 0; g < cut_gallery.size(); ++g) {
        scores[g] = cosine(pf, std::span<const float>(cut_gallery[g].features));
      }
      hits += (cut_gallery[detail::linear_best(scores)].id == probe.id);
    }
    points.push_back(TruncationPoint{
        k, dk, static_cast<double>(hits) / static_cast<double>(probes.size())});
  }
  return points;
}

struct ScalingPoint {
  std::size_t gallery_size = 0;
  double rank1 = 0.0;
};

// Rank-1 under the cascade as distractors join the gallery. counts are
// cumulative distractor totals, non-decreasing, each <= distractors.size().
// Distractor ids must not collide with any probe identity.
inline std::vector<ScalingPoint> gallery_scaling(
    const std::vector<Template>& gallery, const std::vector<Template>& probes,
    const std::vector<Template>& distractors,
    const std::vector<std::size_t>& counts, const CascadeModel& model) {
  detail::check_bench_inputs(gallery, probes, model);
  std::size_t d = model.plan.dim();
  for (const Template& t : distractors) {
    if (t.dim() != d) {
      raise(ErrorKind::dimension_mismatch,
            "gallery scaling: distractor '" + t.id + "' has dimension " +
                std::to_string(t.dim()) + ", model expects " +
                std::to_string(d));
    }
  }
  if (counts.empty()) {
    raise(ErrorKind::invalid_argument, "gallery scaling: no counts given");
  }
  std::size_t prev = 0;
  for (std::size_t c : counts) {
    if (c < prev || c > distractors.size()) {
      raise(ErrorKind::invalid_argument,
            "gallery scaling: counts must be non-decreasing and within the "
            "distractor set");
    }
    prev = c;
  }
  std::unordered_set<std::string_view> probe_ids;
  for (const Template& t : probes) probe_ids.insert(t.id);
  for (const Template& t : distractors) {
    if (probe_ids.contains(t.id)) {
      raise(ErrorKind::invalid_argument,
            "gallery scaling: distractor id '" + t.id +
                "' collides with a probe identity");
    }
  }

  std::vector<Template> combined = gallery;
  std::vector<ScalingPoint> points;
  std::size_t used = 0;
  for (std::size_t c : counts) {
    combined.insert(combined.end(), distractors.begin() + used,
                    distractors.begin() + c);
    used = c;

    std::size_t hits = 0;
    for (const Template& probe : probes) {
      std::span<const float> pf(probe.features);
      std::size_t best = 0;
      MatchResult best_result = cascade_match(
          pf, std::span<const float>(combined[0].features), model);
      for (std::size_t g = 1; g < combined.size(); ++g) {
        MatchResult res = cascade_match(
            pf, std::span<const float>(combined[g].features), model);
        if (ranks_before(res, g, best_result, best)) {
          best_result = res;
          best = g;
        }
      }
      hits += (combined[best].id == probe.id);
    }
    points.push_back(ScalingPoint{
        combined.size(),
        static_cast<double>(hits) / static_cast<double>(probes.size())});
  }
  return points;
}

// ---------------------------------------------------------------------------
// Report rendering: "text" is key: value lines, "table" is tab-separated
// metric/value rows (one row per measurement) for plotting.

namespace detail {

inline std::string format_fraction(double v) {
  char buf[32];
  int len = std::snprintf(buf, sizeof(buf), "%.6f", v);
  return std::string(buf, static_cast<std::size_t>(len));
}

}  // namespace detail

inline std::string format_report(const BenchReport& r,
                                 std::string_view format = "text") {
  bool table = format == "table";
  if (!table && format != "text") {
    raise(ErrorKind::invalid_argument,
          "format must be 'table' or 'text', got '" + std::string(format) +
              "'");
  }
  std::string out;
  auto emit = [&](std::string_view key, const std::string& value) {
    out += key;
    out += table ? "\t" : ": ";
    out += value;
    out += '\n';
  };
  emit("gallery_size", std::to_string(r.gallery_size));
  emit("probe_count", std::to_string(r.probe_count));
  emit("dim", std::to_string(r.dim));
  emit("stage_count", std::to_string(r.stage_count));
  emit("repeats", std::to_string(r.repeats));
  emit("seed", std::to_string(r.seed));
  emit("config_digest",
       r.config_digest.empty() ? std::string("-") : r.config_digest);
  emit("rank1_linear", detail::format_fraction(r.rank1_linear));
  emit("rank1_cascade", detail::format_fraction(r.rank1_cascade));
  emit("rank1_disagreements", std::to_string(r.rank1_disagreements));
  emit("identical_rankings", std::to_string(r.identical_rankings));
  emit("total_time_linear_s", detail::format_fraction(r.total_time_linear));
  emit("total_time_cascade_s", detail::format_fraction(r.total_time_cascade));
  emit("time_per_query_s", detail::format_fraction(r.time_per_query));
  emit("speedup", detail::format_fraction(r.speedup));
  for (std::size_t k = 0; k < r.stage_rejections.size(); ++k) {
    emit("stage_rejections_" + std::to_string(k),
         std::to_string(r.stage_rejections[k]));
  }
  emit("survivors", std::to_string(r.survivors));
  emit("counted_mult_adds", std::to_string(r.counted_mult_adds));
  emit("expected_mult_adds", std::to_string(r.expected_mult_adds));
  return out;
}

inline std::string format_truncation_curve(
    const std::vector<TruncationPoint>& points,
    std::string_view format = "text") {
  bool table = format == "table";
  if (!table && format != "text") {
    raise(ErrorKind::invalid_argument,
          "format must be 'table' or 'text', got '" + std::string(format) +
              "'");
  }
  std::string out;
  if (table) out += "stages_kept\tdim\trank1\n";
  for (const TruncationPoint& pt : points) {
    if (table) {
      out += std::to_string(pt.stages_kept) + "\t" + std::to_string(pt.dim) +
             "\t" + detail::format_fraction(pt.rank1) + "\n";
    } else {
      out += "stages_kept " + std::to_string(pt.stages_kept) + ", dim " +
             std::to_string(pt.dim) + ", rank1 " +
             detail::format_fraction(pt.rank1) + "\n";
    }
  }
  return out;
}

inline std::string format_gallery_scaling(
    const std::vector<ScalingPoint>& points, std::string_view format = "text") {
  bool table = format == "table";
  if (!table && format != "text") {
    raise(ErrorKind::invalid_argument,
          "format must be 'table' or 'text', got '" + std::string(format) +
              "'");
  }
  std::string out;
  if (table) out += "gallery_size\trank1\n";
  for (const ScalingPoint& pt : points) {
    if (table) {
      out += std::to_string(pt.gallery_size) + "\t" +
             detail::format_fraction(pt.rank1) + "\n";
    } else {
      out += "gallery_size " + std::to_string(pt.gallery_size) + ", rank1 " +
             detail::format_fraction(pt.rank1) + "\n";
    }
  }
  return out;
}

}  // namespace stagematch
