// Acceptance gate: eight pass/fail criteria over the full pipeline, printed
// one line each. Exits nonzero if any criterion fails. Tolerances and
// fixture parameters are pinned here on purpose; do not relax them to make
// a run green.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "stagematch/bench.hpp"
#include "stagematch/cascade.hpp"
#include "stagematch/core.hpp"
#include "stagematch/error.hpp"
#include "stagematch/lda.hpp"
#include "stagematch/rng.hpp"
#include "stagematch/store.hpp"
#include "stagematch/synth.hpp"

using namespace stagematch;

namespace {

// Fixture geometry: 428 dims, 7 stages, thresholds learned on genuine pairs
// from a disjoint training population, evaluated on 1,196 enrolled
// identities against a gallery padded with 100,000 distractors.
constexpr std::size_t kDim = 428;
constexpr std::size_t kStages = 7;
constexpr double kVrBase = 0.999;

constexpr std::size_t kTrainIds = 429;
constexpr std::size_t kTrainSamples = 8;
constexpr double kSigmaTrain = 0.15;
constexpr std::uint64_t kTrainSeed = 1001;
constexpr std::size_t kMaxPairs = 10000;

constexpr std::size_t kEvalIds = 1196;
constexpr double kSigmaEval = 0.08;
constexpr std::uint64_t kEvalSeed = 2002;

constexpr std::size_t kDistractorIds = 100000;
constexpr std::size_t kDistractorChunk = 10000;
constexpr std::uint64_t kDistractorSeedBase = 3000;

// Class-mean energy profile: geometric decay with per-stage energy blocks
// pinned to expectation, so every identity carries the same signal share in
// each stage prefix.
constexpr double kMeanDecay = 0.9889;
const std::vector<std::size_t> kBlocks = {6, 7, 13, 27, 54, 107, 214};

int g_failures = 0;

void report(int criterion, bool pass, const std::string& what,
            const std::string& detail) {
  std::printf("%s criterion %d: %s (%s)\n", pass ? "PASS" : "FAIL", criterion,
              what.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

SynthConfig fixture_config(std::size_t ids, std::size_t samples, double sigma,
                           std::uint64_t seed, const std::string& prefix) {
  SynthConfig cfg;
  cfg.num_ids = ids;
  cfg.samples_per_id = samples;
  cfg.dim_raw = kDim;
  cfg.noise_sigma = sigma;
  cfg.seed = seed;
  cfg.id_prefix = prefix;
  cfg.mean_decay = kMeanDecay;
  cfg.equal_energy_blocks = kBlocks;
  return cfg;
}

Template row_template(const LabeledDataset& data, std::size_t row) {
  return make_template(data.labels[row], data.row(row));
}

// --------------------------------------------------------------------------

void criterion_1_geometry() {
  StagePlan plan = make_stage_plan(kDim, kStages);
  const std::vector<std::size_t> expected{6, 13, 26, 53, 107, 214, 428};
  bool pass = plan.boundaries == expected;
  StagePlan alt = make_stage_plan(100, 3);
  pass = pass && alt.boundaries == std::vector<std::size_t>{25, 50, 100};

  std::string got = "got";
  for (std::size_t b : plan.boundaries) got += " " + std::to_string(b);
  report(1, pass, "stage geometry is exact", got);
}

void criterion_2_degenerate_equivalence() {
  StagePlan plan = make_stage_plan(kDim, kStages);
  CascadeModel open;
  open.plan = plan;
  open.thresholds.assign(kStages, -2.0);
  open.target_vrs.assign(kStages, 1.0);

  const std::size_t pairs = 10000;
  SplitMix64 rng(77);
  std::vector<Template> xs, ys;
  xs.reserve(pairs);
  ys.reserve(pairs);
  for (std::size_t i = 0; i < pairs; ++i) {
    std::vector<double> a(kDim), b(kDim);
    for (auto& v : a) v = rng.next_gaussian();
    for (auto& v : b) v = rng.next_gaussian();
    xs.push_back(make_template("a", std::span<const double>(a)));
    ys.push_back(make_template("b", std::span<const double>(b)));
  }

  auto t0 = std::chrono::steady_clock::now();
  std::size_t exact = 0;
  for (std::size_t i = 0; i < pairs; ++i) {
    std::span<const float> x(xs[i].features), y(ys[i].features);
    double direct = cosine(x, y);
    MatchResult staged = cascade_match(x, y, open);
    if (!staged.rejected && staged.score == direct) ++exact;
  }
  double dt = seconds_since(t0);

  char detail[128];
  std::snprintf(detail, sizeof(detail),
                "%zu/%zu bit-identical in %.3f s (budget 1 s)", exact, pairs,
                dt);
  report(2, exact == pairs && dt < 1.0,
         "thresholds-disabled cascade reproduces cosine bit-for-bit", detail);
}

CascadeModel criterion_3_vr_satisfaction(const LabeledDataset& train) {
  auto t0 = std::chrono::steady_clock::now();
  StagePlan plan = make_stage_plan(kDim, kStages);
  std::vector<double> vrs = default_vr_schedule(kStages, kVrBase);

  // Genuine pairs straight from raw templates (no projection: the fixture
  // controls the embedding shape directly).
  std::vector<Template> tpls(train.sample_count());
  for (std::size_t i = 0; i < train.sample_count(); ++i) {
    tpls[i] = row_template(train, i);
  }
  std::vector<PairSample> pairs;
  pairs.reserve(kMaxPairs);
  for (std::size_t c = 0; c < kTrainIds && pairs.size() < kMaxPairs; ++c) {
    std::size_t base = c * kTrainSamples;
    for (std::size_t a = 0; a < kTrainSamples; ++a) {
      for (std::size_t b = a + 1; b < kTrainSamples; ++b) {
        if (pairs.size() == kMaxPairs) break;
        pairs.push_back(build_pair_sample(
            std::span<const float>(tpls[base + a].features),
            std::span<const float>(tpls[base + b].features), true));
      }
    }
  }

  CascadeModel model = learn_thresholds(pairs, plan, vrs);

  // Independent replay of the retention fractions.
  const std::size_t n = pairs.size();
  bool windows_ok = n == kMaxPairs;
  double worst_excess = 0.0;
  std::vector<double> partial(n, 0.0);
  std::size_t start = 0;
  for (std::size_t k = 0; k < kStages; ++k) {
    std::size_t stop = plan.boundaries[k];
    std::size_t passed = 0;
    for (std::size_t j = 0; j < n; ++j) {
      double s = partial[j];
      for (std::size_t i = start; i < stop; ++i) s += pairs[j].values[i];
      partial[j] = s;
      if (s >= model.thresholds[k]) ++passed;
    }
    start = stop;
    double frac = static_cast<double>(passed) / static_cast<double>(n);
    double lo = vrs[k];
    double hi = vrs[k] + 1.0 / static_cast<double>(n);
    if (!(frac >= lo && frac <= hi + 1e-12)) windows_ok = false;
    worst_excess = std::max(worst_excess, frac - lo);
  }
  double dt = seconds_since(t0);

  char detail[160];
  std::snprintf(detail, sizeof(detail),
                "n=%zu, all stage fractions in [v, v+1/n], max excess %.6f, "
                "%.2f s (budget 5 s)",
                n, worst_excess, dt);
  report(3, windows_ok && dt < 5.0,
         "learned thresholds satisfy the verification-rate windows", detail);
  return model;
}

struct FixtureSets {
  std::vector<Template> gallery;  // enrolled mates + distractors
  std::vector<Template> probes;
};

FixtureSets build_fixture() {
  FixtureSets f;
  f.gallery.reserve(kEvalIds + kDistractorIds);
  f.probes.reserve(kEvalIds);

  LabeledDataset eval =
      generate(fixture_config(kEvalIds, 2, kSigmaEval, kEvalSeed, "p"));
  for (std::size_t i = 0; i < kEvalIds; ++i) {
    f.gallery.push_back(row_template(eval, 2 * i));
    f.probes.push_back(row_template(eval, 2 * i + 1));
  }

  // Distractors arrive in chunks to bound generation memory; only the first
  // sample of each distractor identity is enrolled.
  std::size_t chunks = kDistractorIds / kDistractorChunk;
  for (std::size_t c = 0; c < chunks; ++c) {
    LabeledDataset d = generate(
        fixture_config(kDistractorChunk, 2, kSigmaEval,
                       kDistractorSeedBase + c, "d" + std::to_string(c)));
    for (std::size_t i = 0; i < kDistractorChunk; ++i) {
      f.gallery.push_back(row_template(d, 2 * i));
    }
  }
  return f;
}

BenchReport criteria_4_5_fixture(const FixtureSets& f,
                                 const CascadeModel& model) {
  BenchReport r = run_benchmark(f.gallery, f.probes, model, 3);

  char detail4[160];
  std::snprintf(detail4, sizeof(detail4),
                "rank1 linear %.6f vs cascade %.6f, %llu/%zu probes disagree",
                r.rank1_linear, r.rank1_cascade,
                static_cast<unsigned long long>(r.rank1_disagreements),
                f.probes.size());
  report(4, r.rank1_disagreements == 0,
         "cascade rank-1 equals linear scan on every probe", detail4);

  std::uint64_t comparisons =
      static_cast<std::uint64_t>(r.gallery_size) * r.probe_count;
  std::uint64_t early = r.stage_rejections[0] + r.stage_rejections[1];
  double early_frac =
      static_cast<double>(early) / static_cast<double>(comparisons);
  bool reconciled = r.counted_mult_adds == r.expected_mult_adds;

  char detail5[200];
  std::snprintf(detail5, sizeof(detail5),
                "speedup %.2fx (>=3), %.2f%% ended within 2 stages (>=90%%), "
                "counted %llu == expected %llu: %s",
                r.speedup, 100.0 * early_frac,
                static_cast<unsigned long long>(r.counted_mult_adds),
                static_cast<unsigned long long>(r.expected_mult_adds),
                reconciled ? "yes" : "no");
  report(5, r.speedup >= 3.0 && early_frac >= 0.90 && reconciled,
         "fixture speed-up, early termination, and work accounting", detail5);
  return r;
}

void criterion_6_truncation(const FixtureSets& f, const CascadeModel& model) {
  auto points = truncation_curve(f.gallery, f.probes, model);
  bool monotone = true;
  for (std::size_t k = 1; k < points.size(); ++k) {
    if (points[k].rank1 < points[k - 1].rank1 - 0.02) monotone = false;
  }
  double full = points.back().rank1;
  double sixth = points[points.size() - 2].rank1;
  bool cheap_cut = sixth >= full - 0.05;

  std::string curve = "rank1 by stages kept:";
  for (const auto& pt : points) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), " %zu:%.4f", pt.stages_kept, pt.rank1);
    curve += buf;
  }
  report(6, monotone && cheap_cut,
         "truncating to 6 of 7 stages costs <= 5 points, curve clean", curve);
}

void criterion_7_lda() {
  // Two separated Gaussian blobs; the 1-dim discriminant must align with
  // the class-mean difference. The sample count is large relative to the
  // dimension so the empirical Fisher direction (which tilts by an angle on
  // the order of sqrt(dim / samples)) stays within the 0.99 bound.
  SplitMix64 rng(55);
  LabeledDataset data;
  data.dim_raw = 8;
  std::vector<double> mu_a{2.0, -1.0, 0.5, 0.0, 1.0, -0.5, 0.25, 0.75};
  std::vector<double> mu_b{-2.0, 1.0, -0.5, 0.0, -1.0, 0.5, -0.25, -0.75};
  for (int s = 0; s < 6000; ++s) {
    const auto& mu = (s % 2 == 0) ? mu_a : mu_b;
    data.labels.push_back(s % 2 == 0 ? "a" : "b");
    for (double m : mu) data.features.push_back(m + 0.3 * rng.next_gaussian());
  }
  LdaProjection p = fit_lda(data, 1);

  // Empirical class-mean difference.
  std::vector<double> diff(8, 0.0);
  ClassIndex classes = group_by_label(data);
  for (std::size_t i = 0; i < 8; ++i) {
    double ma = 0.0, mb = 0.0;
    for (std::size_t idx : classes.members[0]) ma += data.row(idx)[i];
    for (std::size_t idx : classes.members[1]) mb += data.row(idx)[i];
    diff[i] = ma / static_cast<double>(classes.members[0].size()) -
              mb / static_cast<double>(classes.members[1].size());
  }
  double dot = 0.0, nb = 0.0, nd = 0.0;
  for (std::size_t i = 0; i < 8; ++i) {
    dot += p.basis[i] * diff[i];
    nb += p.basis[i] * p.basis[i];
    nd += diff[i] * diff[i];
  }
  double align = std::fabs(dot) / std::sqrt(nb * nd);

  // Eigenvalue ordering on a multi-class fixture.
  SynthConfig cfg;
  cfg.num_ids = 20;
  cfg.samples_per_id = 5;
  cfg.dim_raw = 24;
  cfg.noise_sigma = 0.35;
  cfg.seed = 8;
  LdaProjection multi = fit_lda(generate(cfg), 19);
  bool ordered = true;
  for (std::size_t j = 1; j < multi.eigenvalues.size(); ++j) {
    if (multi.eigenvalues[j] > multi.eigenvalues[j - 1]) ordered = false;
    if (multi.eigenvalues[j] < 0.0) ordered = false;
  }

  char detail[96];
  std::snprintf(detail, sizeof(detail),
                "|cos| = %.6f (>= 0.99), eigenvalues non-increasing: %s",
                align, ordered ? "yes" : "no");
  report(7, align >= 0.99 && ordered,
         "LDA direction and eigenvalue ordering", detail);
}

void criterion_8_roundtrips() {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "stagematch-acceptance";
  fs::create_directories(dir);
  bool pass = true;
  std::string note;

  // Templates.
  SplitMix64 rng(99);
  std::vector<Template> tpls;
  for (int i = 0; i < 32; ++i) {
    std::vector<double> v(kDim);
    for (auto& x : v) x = rng.next_gaussian();
    tpls.push_back(
        make_template("t-" + std::to_string(i), std::span<const double>(v)));
  }
  fs::path tp = dir / "t.ctpl";
  write_templates(tp, tpls);
  auto tpls2 = read_templates(tp);
  for (std::size_t i = 0; i < tpls.size(); ++i) {
    if (tpls2[i].id != tpls[i].id || tpls2[i].features != tpls[i].features) {
      pass = false;
      note = "template round-trip drifted";
    }
  }

  // Model.
  CascadeModel model;
  model.plan = make_stage_plan(kDim, kStages);
  model.target_vrs = default_vr_schedule(kStages, kVrBase);
  model.thresholds = {0.1, 0.2, 1.0 / 3.0, 0.4437829786, 0.5, 0.625, 0.75};
  model.train_count = 10000;
  fs::path mp = dir / "m.txt";
  write_model(mp, model);
  CascadeModel model2 = read_model(mp);
  if (model2.plan.boundaries != model.plan.boundaries ||
      model2.thresholds != model.thresholds ||
      model2.target_vrs != model.target_vrs ||
      model2.train_count != model.train_count) {
    pass = false;
    note = "model round-trip drifted";
  }

  // Projection.
  SynthConfig cfg;
  cfg.num_ids = 6;
  cfg.samples_per_id = 4;
  cfg.dim_raw = 10;
  cfg.noise_sigma = 0.3;
  cfg.seed = 4;
  LdaProjection proj = fit_lda(generate(cfg), 5);
  fs::path pp = dir / "p.proj";
  write_projection(pp, proj);
  LdaProjection proj2 = read_projection(pp);
  if (proj2.mean != proj.mean || proj2.basis != proj.basis ||
      proj2.eigenvalues != proj.eigenvalues) {
    pass = false;
    note = "projection round-trip drifted";
  }

  // Categorized corruption.
  std::string raw = detail::load_file(tp);
  std::string bad_magic = raw;
  bad_magic[0] = 'Z';
  fs::path bm = dir / "bad-magic.ctpl";
  detail::store_file(bm, bad_magic);
  bool magic_ok = false;
  try {
    read_templates(bm);
  } catch (const Error& e) {
    magic_ok = e.kind() == ErrorKind::format &&
               std::string(e.what()).find("bad magic") != std::string::npos;
  }

  fs::path tr = dir / "truncated.ctpl";
  detail::store_file(tr, std::string_view(raw).substr(0, raw.size() - 9));
  bool trunc_ok = false;
  try {
    read_templates(tr);
  } catch (const Error& e) {
    trunc_ok = e.kind() == ErrorKind::format &&
               std::string(e.what()).find("truncated") != std::string::npos;
  }

  if (!magic_ok) {
    pass = false;
    note = "corrupted magic not categorized";
  }
  if (!trunc_ok) {
    pass = false;
    note = "truncated payload not categorized";
  }

  std::error_code ec;
  fs::remove_all(dir, ec);
  report(8, pass, "file round-trips exact, corruption categorized",
         pass ? "templates, model, projection all bit-stable" : note);
}

}  // namespace

int main() {
  std::printf("stagematch acceptance gate\n");

  criterion_1_geometry();
  criterion_2_degenerate_equivalence();

  auto t0 = std::chrono::steady_clock::now();
  LabeledDataset train = generate(
      fixture_config(kTrainIds, kTrainSamples, kSigmaTrain, kTrainSeed, "s"));
  std::printf("  [fixture] training set %zu x %zu generated in %.1f s\n",
              kTrainIds, kTrainSamples, seconds_since(t0));

  CascadeModel model = criterion_3_vr_satisfaction(train);

  t0 = std::chrono::steady_clock::now();
  FixtureSets fixture = build_fixture();
  std::printf("  [fixture] gallery %zu (%zu enrolled + %zu distractors), "
              "%zu probes in %.1f s\n",
              fixture.gallery.size(), kEvalIds, kDistractorIds,
              fixture.probes.size(), seconds_since(t0));

  t0 = std::chrono::steady_clock::now();
  BenchReport r = criteria_4_5_fixture(fixture, model);
  std::printf("  [fixture] benchmark in %.1f s; stage rejections:",
              seconds_since(t0));
  for (std::size_t k = 0; k < r.stage_rejections.size(); ++k) {
    std::printf(" %llu",
                static_cast<unsigned long long>(r.stage_rejections[k]));
  }
  std::printf(" survivors %llu\n",
              static_cast<unsigned long long>(r.survivors));

  t0 = std::chrono::steady_clock::now();
  criterion_6_truncation(fixture, model);
  std::printf("  [fixture] truncation curve in %.1f s\n", seconds_since(t0));

  criterion_7_lda();
  criterion_8_roundtrips();

  if (g_failures == 0) {
    std::printf("ACCEPTANCE: all 8 criteria passed\n");
    return 0;
  }
  std::printf("ACCEPTANCE: %d criterion(s) FAILED\n", g_failures);
  return 1;
}
