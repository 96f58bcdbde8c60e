#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "stagematch/bench.hpp"
#include "stagematch/cascade.hpp"
#include "stagematch/core.hpp"
#include "stagematch/lda.hpp"
#include "stagematch/synth.hpp"
#include "test_util.hpp"

using namespace stagematch;
using testutil::capture_error;

namespace {

struct Fixture {
  std::vector<Template> gallery;
  std::vector<Template> probes;
  CascadeModel model;
};

// Small end-to-end fixture: synthetic identities, a fitted projection, a
// learned cascade. Kept small enough that unit runs are instant.
Fixture make_fixture(std::size_t num_ids, std::size_t samples, double vr_base,
                     std::uint64_t seed) {
  SynthConfig cfg;
  cfg.num_ids = num_ids;
  cfg.samples_per_id = samples;
  cfg.dim_raw = 32;
  cfg.noise_sigma = 0.25;
  cfg.seed = seed;
  LabeledDataset data = generate(cfg);
  std::size_t dim_out = std::min<std::size_t>(num_ids - 1, 31);
  LdaProjection p = fit_lda(data, dim_out);

  Fixture f;
  StagePlan plan = make_stage_plan(dim_out, 4);
  auto pairs = mine_genuine_pairs(data, p, 5000);
  f.model = learn_thresholds(pairs, plan, default_vr_schedule(4, vr_base));

  // Evaluation identities are fresh draws from the same model.
  SynthConfig eval = cfg;
  eval.seed = seed + 1;
  eval.id_prefix = "eval";
  GalleryProbeSplit split = split_gallery_probe(generate(eval), p, seed + 2);
  f.gallery = std::move(split.gallery);
  f.probes = std::move(split.probes);
  return f;
}

CascadeModel disabled_clone(const CascadeModel& m) {
  CascadeModel open = m;
  for (auto& t : open.thresholds) t = -2.0;
  for (auto& v : open.target_vrs) v = 1.0;
  return open;
}

}  // namespace

TEST_CASE("run_benchmark accounting wires exactly", "[bench]") {
  Fixture f = make_fixture(40, 4, 0.99, 5);
  RunProvenance prov{1234, digest_hex("fixture config")};
  BenchReport r = run_benchmark(f.gallery, f.probes, f.model, 1, prov);

  CHECK(r.gallery_size == 40);
  CHECK(r.probe_count == 120);
  CHECK(r.dim == 31);
  CHECK(r.stage_count == 4);
  CHECK(r.repeats == 1);
  CHECK(r.seed == 1234);
  CHECK(r.config_digest == prov.config_digest);

  // Every (probe, gallery) pair either dies at exactly one stage or
  // survives to a full-length evaluation.
  std::uint64_t total = std::accumulate(r.stage_rejections.begin(),
                                        r.stage_rejections.end(),
                                        std::uint64_t{0});
  REQUIRE(r.stage_rejections.size() == 4);
  CHECK(total + r.survivors == 120ull * 40ull);

  // The literal multiply counter must reconcile with the histogram.
  std::uint64_t expected = 0;
  const std::size_t m[] = {3, 7, 15, 31};
  for (std::size_t k = 0; k < 4; ++k) {
    expected += r.stage_rejections[k] * m[k];
  }
  expected += r.survivors * 31;
  CHECK(r.expected_mult_adds == expected);
  CHECK(r.counted_mult_adds == expected);

  // Rates are consistent with the disagreement counter.
  double hits_gap = std::fabs(r.rank1_linear - r.rank1_cascade) * 120.0;
  CHECK(hits_gap <= static_cast<double>(r.rank1_disagreements) + 1e-9);
  CHECK(r.identical_rankings <= 120);

  CHECK(r.total_time_linear > 0.0);
  CHECK(r.total_time_cascade > 0.0);
  CHECK(r.speedup > 0.0);
  CHECK(r.time_per_query == r.total_time_cascade / 120.0);
}

TEST_CASE("disabled thresholds make the cascade a plain linear scan",
          "[bench][slow]") {
  Fixture f = make_fixture(300, 5, 0.999, 7);
  CascadeModel open = disabled_clone(f.model);
  BenchReport r = run_benchmark(f.gallery, f.probes, open, 3);

  const std::uint64_t n = 300, p = 1200, d = 31;
  CHECK(r.rank1_linear == r.rank1_cascade);
  CHECK(r.rank1_disagreements == 0);
  CHECK(r.identical_rankings == p);
  CHECK(r.survivors == p * n);
  for (auto rej : r.stage_rejections) CHECK(rej == 0);
  CHECK(r.counted_mult_adds == p * n * d);
  CHECK(r.expected_mult_adds == p * n * d);

  // Same arithmetic, same work: the two timed passes should be close.
  // Generous envelope because the host is shared.
  CHECK(r.speedup > 0.6);
  CHECK(r.speedup < 1.67);
}

TEST_CASE("run_benchmark validates inputs", "[bench]") {
  Fixture f = make_fixture(10, 3, 0.99, 9);

  std::vector<Template> empty;
  CHECK(capture_error([&] {
          run_benchmark(empty, f.probes, f.model, 1);
        }).kind == ErrorKind::invalid_argument);
  CHECK(capture_error([&] {
          run_benchmark(f.gallery, empty, f.model, 1);
        }).kind == ErrorKind::invalid_argument);
  CHECK(capture_error([&] {
          run_benchmark(f.gallery, f.probes, f.model, 0);
        }).kind == ErrorKind::invalid_argument);

  CascadeModel wrong = f.model;
  wrong.plan = make_stage_plan(16, 4);
  wrong.thresholds = {0.0, 0.0, 0.0, 0.0};
  CHECK(capture_error([&] {
          run_benchmark(f.gallery, f.probes, wrong, 1);
        }).kind == ErrorKind::dimension_mismatch);
}

TEST_CASE("truncation_curve sweeps stage prefixes", "[bench]") {
  Fixture f = make_fixture(40, 4, 0.99, 5);
  BenchReport r = run_benchmark(f.gallery, f.probes, f.model, 1);
  auto points = truncation_curve(f.gallery, f.probes, f.model);

  REQUIRE(points.size() == 4);
  const std::size_t dims[] = {3, 7, 15, 31};
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(points[k].stages_kept == k + 1);
    CHECK(points[k].dim == dims[k]);
    CHECK(points[k].rank1 >= 0.0);
    CHECK(points[k].rank1 <= 1.0);
  }
  // Keeping every stage is exactly the unstaged linear baseline.
  CHECK(points[3].rank1 == r.rank1_linear);

  CascadeModel single;
  single.plan = make_stage_plan(31, 1);
  single.thresholds = {-2.0};
  single.target_vrs = {1.0};
  CHECK(capture_error([&] {
          truncation_curve(f.gallery, f.probes, single);
        }).kind == ErrorKind::invalid_argument);
}

TEST_CASE("gallery_scaling grows the gallery with distractors", "[bench]") {
  Fixture f = make_fixture(40, 4, 0.99, 5);
  BenchReport r = run_benchmark(f.gallery, f.probes, f.model, 1);

  SynthConfig dx;
  dx.num_ids = 250;
  dx.samples_per_id = 2;
  dx.dim_raw = 32;
  dx.noise_sigma = 0.25;
  dx.seed = 99;
  dx.id_prefix = "dx";
  LabeledDataset ddata = generate(dx);
  // Reuse the fixture's projection basis by refitting on the same seed.
  SynthConfig cfg;
  cfg.num_ids = 40;
  cfg.samples_per_id = 4;
  cfg.dim_raw = 32;
  cfg.noise_sigma = 0.25;
  cfg.seed = 5;
  LdaProjection p = fit_lda(generate(cfg), 31);
  std::vector<Template> distractors = project_dataset(ddata, p);

  std::vector<std::size_t> counts{0, 100, 500};
  auto points = gallery_scaling(f.gallery, f.probes, distractors, counts,
                                f.model);
  REQUIRE(points.size() == 3);
  CHECK(points[0].gallery_size == 40);
  CHECK(points[1].gallery_size == 140);
  CHECK(points[2].gallery_size == 540);

  // No distractors: identical setup to the benchmark's cascade pass.
  CHECK(points[0].rank1 == r.rank1_cascade);
  // More distractors cannot help; allow a little noise headroom.
  CHECK(points[1].rank1 <= points[0].rank1 + 0.02);
  CHECK(points[2].rank1 <= points[1].rank1 + 0.02);

  SECTION("probe ids may not appear among distractors") {
    std::vector<Template> leaky = distractors;
    leaky.push_back(f.probes[0]);
    CHECK(capture_error([&] {
            gallery_scaling(f.gallery, f.probes, leaky, {0, 1}, f.model);
          }).kind == ErrorKind::invalid_argument);
  }

  SECTION("counts must be non-decreasing and within range") {
    CHECK(capture_error([&] {
            gallery_scaling(f.gallery, f.probes, distractors, {100, 50},
                            f.model);
          }).kind == ErrorKind::invalid_argument);
    CHECK(capture_error([&] {
            gallery_scaling(f.gallery, f.probes, distractors, {1000},
                            f.model);
          }).kind == ErrorKind::invalid_argument);
    CHECK(capture_error([&] {
            gallery_scaling(f.gallery, f.probes, distractors, {}, f.model);
          }).kind == ErrorKind::invalid_argument);
  }
}

TEST_CASE("report formatting covers text and table", "[bench]") {
  Fixture f = make_fixture(10, 3, 0.99, 3);
  RunProvenance prov{42, digest_hex("cfg")};
  BenchReport r = run_benchmark(f.gallery, f.probes, f.model, 1, prov);

  std::string text = format_report(r, "text");
  CHECK(text.find("gallery_size: 10") != std::string::npos);
  CHECK(text.find("speedup: ") != std::string::npos);
  CHECK(text.find("stage_rejections_0: ") != std::string::npos);
  CHECK(text.find("config_digest: " + prov.config_digest) !=
        std::string::npos);

  std::string table = format_report(r, "table");
  CHECK(table.find("gallery_size\t10") != std::string::npos);
  CHECK(table.find('\t') != std::string::npos);

  CHECK(capture_error([&] { format_report(r, "csv"); }).kind ==
        ErrorKind::invalid_argument);

  auto points = truncation_curve(f.gallery, f.probes, f.model);
  std::string curve = format_truncation_curve(points, "text");
  CHECK(curve.find("stages_kept") != std::string::npos);
  std::string curve_tab = format_truncation_curve(points, "table");
  CHECK(curve_tab.find('\t') != std::string::npos);
}

TEST_CASE("digest_hex is stable", "[bench]") {
  CHECK(digest_hex("") == "cbf29ce484222325");
  CHECK(digest_hex("stagematch") != digest_hex("stagematch "));
  CHECK(digest_hex("abc").size() == 16);
}
