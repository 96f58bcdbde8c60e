// Command-line front end for the stagematch library: generate synthetic
// data, train the projection, learn cascade thresholds, identify, benchmark,
// and truncate. Every subcommand is a thin wrapper over library calls; all
// output artifacts carry provenance (tool version, seed, effective config
// digest, input digests) either embedded as comments (text formats) or in a
// .meta sidecar (binary formats).

#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "stagematch/bench.hpp"
#include "stagematch/cascade.hpp"
#include "stagematch/core.hpp"
#include "stagematch/error.hpp"
#include "stagematch/lda.hpp"
#include "stagematch/store.hpp"
#include "stagematch/synth.hpp"

namespace sm = stagematch;
namespace fs = std::filesystem;

namespace {

constexpr const char* kToolVersion = "stagematch 1.0.0";

int exit_code_for(sm::ErrorKind kind) {
  switch (kind) {
    case sm::ErrorKind::invalid_argument: return 2;
    case sm::ErrorKind::dimension_mismatch: return 3;
    case sm::ErrorKind::normalization: return 4;
    case sm::ErrorKind::format: return 5;
    case sm::ErrorKind::io: return 6;
  }
  return 10;
}

// Options shared by every subcommand.
struct CommonOpts {
  std::string out_dir = ".";
  std::uint64_t seed = 42;
  std::string format = "text";
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--out-dir", opts.out_dir,
                  "Directory for default output paths")
      ->capture_default_str();
  cmd->add_option("--seed", opts.seed, "Seed for any randomized step")
      ->capture_default_str();
  cmd->add_option("--format", opts.format, "Output rendering: table or text")
      ->check(CLI::IsMember({"table", "text"}))
      ->capture_default_str();
}

fs::path resolve_out(const CommonOpts& common, const std::string& explicit_path,
                     const char* default_name) {
  if (!explicit_path.empty()) return fs::path(explicit_path);
  return fs::path(common.out_dir) / default_name;
}

std::string file_digest(const fs::path& path) {
  return sm::digest_hex(sm::detail::load_file(path));
}

// Effective-config echo: CLI11's config dump covers every option with its
// resolved value (flag > config file > default).
std::string effective_config(const CLI::App& cmd) {
  return cmd.config_to_str(true, false);
}

std::vector<std::string> provenance_comments(
    const CLI::App& cmd, const CommonOpts& common,
    const std::vector<fs::path>& inputs) {
  std::vector<std::string> lines;
  lines.push_back(std::string("tool ") + kToolVersion);
  lines.push_back("subcommand " + cmd.get_name());
  lines.push_back("seed " + std::to_string(common.seed));
  lines.push_back("config_digest " + sm::digest_hex(effective_config(cmd)));
  for (const fs::path& in : inputs) {
    lines.push_back("input " + in.string() + " " + file_digest(in));
  }
  return lines;
}

// Sidecar provenance for binary artifacts, echoing the full effective
// config.
void write_meta(const fs::path& artifact, const CLI::App& cmd,
                const CommonOpts& common, const std::vector<fs::path>& inputs) {
  std::string out = "stagematch-meta v1\n";
  for (const std::string& line : provenance_comments(cmd, common, inputs)) {
    out += line;
    out += '\n';
  }
  for (const auto& line :
       sm::detail::split_lines(effective_config(cmd))) {
    if (line.empty()) continue;
    out += "config ";
    out += line;
    out += '\n';
  }
  fs::path meta = artifact;
  meta += ".meta";
  sm::detail::store_file(meta, out);
}

void write_text_output(const std::string& path, const std::string& contents) {
  if (path.empty() || path == "-") {
    std::cout << contents;
  } else {
    sm::detail::store_file(fs::path(path), contents);
  }
}

// ---------------------------------------------------------------------------

struct GenOpts {
  CommonOpts common;
  std::size_t ids = 100;
  std::size_t samples = 4;
  std::size_t dim = 64;
  double sigma = 0.3;
  std::string prefix = "id";
  double mean_decay = 1.0;
  std::vector<std::size_t> blocks;
  std::string out;
  std::string projection;
  std::string gallery_out;
  std::string probes_out;
};

int run_gen(const CLI::App& cmd, const GenOpts& opts) {
  sm::SynthConfig cfg;
  cfg.num_ids = opts.ids;
  cfg.samples_per_id = opts.samples;
  cfg.dim_raw = opts.dim;
  cfg.noise_sigma = opts.sigma;
  cfg.seed = opts.common.seed;
  cfg.id_prefix = opts.prefix;
  cfg.mean_decay = opts.mean_decay;
  cfg.equal_energy_blocks = opts.blocks;

  sm::LabeledDataset data = sm::generate(cfg);
  fs::path out = resolve_out(opts.common, opts.out, "dataset.bin");
  std::uint64_t bytes = sm::write_dataset(out, data);
  write_meta(out, cmd, opts.common, {});
  std::cout << "wrote " << out.string() << " (" << data.sample_count()
            << " samples, dim " << data.dim_raw << ", " << bytes
            << " bytes)\n";

  if (!opts.projection.empty()) {
    if (opts.gallery_out.empty() || opts.probes_out.empty()) {
      sm::raise(sm::ErrorKind::invalid_argument,
                "gen: --projection needs --gallery-out and --probes-out");
    }
    sm::LdaProjection p = sm::read_projection(opts.projection);
    sm::GalleryProbeSplit split =
        sm::split_gallery_probe(data, p, opts.common.seed);
    std::uint64_t gb = sm::write_templates(opts.gallery_out, split.gallery);
    write_meta(opts.gallery_out, cmd, opts.common, {fs::path(opts.projection)});
    std::uint64_t pb = sm::write_templates(opts.probes_out, split.probes);
    write_meta(opts.probes_out, cmd, opts.common, {fs::path(opts.projection)});
    std::cout << "wrote " << opts.gallery_out << " (" << split.gallery.size()
              << " templates, " << gb << " bytes)\n";
    std::cout << "wrote " << opts.probes_out << " (" << split.probes.size()
              << " templates, " << pb << " bytes)\n";
  }
  return 0;
}

struct TrainLdaOpts {
  CommonOpts common;
  std::string data;
  std::size_t dim_out = 0;  // 0: min(class_count - 1, dim_raw)
  std::string out;
};

int run_train_lda(const CLI::App& cmd, const TrainLdaOpts& opts) {
  sm::LabeledDataset data = sm::read_dataset(opts.data);
  std::size_t dim_out = opts.dim_out;
  if (dim_out == 0) {
    std::size_t classes = sm::group_by_label(data).class_count();
    if (classes < 2) {
      sm::raise(sm::ErrorKind::invalid_argument,
                "train-lda: dataset has fewer than 2 classes");
    }
    dim_out = std::min(classes - 1, data.dim_raw);
  }
  sm::LdaProjection p = sm::fit_lda(data, dim_out);
  fs::path out = resolve_out(opts.common, opts.out, "projection.bin");
  auto comments = provenance_comments(cmd, opts.common, {fs::path(opts.data)});
  std::uint64_t bytes = sm::write_projection(out, p, comments);
  std::cout << "wrote " << out.string() << " (dim " << p.dim_raw << " -> "
            << p.dim_out << ", " << bytes << " bytes)\n";
  std::cout << "leading eigenvalues:";
  for (std::size_t j = 0; j < std::min<std::size_t>(4, p.dim_out); ++j) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), " %.4g", p.eigenvalues[j]);
    std::cout << buf;
  }
  std::cout << "\n";
  return 0;
}

struct LearnOpts {
  CommonOpts common;
  std::string data;
  std::string projection;
  std::size_t stages = 7;
  double vr_base = 0.999;
  std::size_t max_pairs = 10000;
  std::string out;
};

int run_learn(const CLI::App& cmd, const LearnOpts& opts) {
  sm::LabeledDataset data = sm::read_dataset(opts.data);
  sm::LdaProjection p = sm::read_projection(opts.projection);
  sm::StagePlan plan = sm::make_stage_plan(p.dim_out, opts.stages);
  std::vector<double> vrs = sm::default_vr_schedule(opts.stages, opts.vr_base);
  std::vector<sm::PairSample> pairs =
      sm::mine_genuine_pairs(data, p, opts.max_pairs);
  sm::CascadeModel model = sm::learn_thresholds(pairs, plan, vrs);

  fs::path out = resolve_out(opts.common, opts.out, "model.txt");
  auto comments = provenance_comments(
      cmd, opts.common, {fs::path(opts.data), fs::path(opts.projection)});
  std::uint64_t bytes = sm::write_model(out, model, comments);
  std::cout << "wrote " << out.string() << " (" << model.plan.stage_count()
            << " stages, dim " << model.plan.dim() << ", trained on "
            << model.train_count << " genuine pairs, " << bytes
            << " bytes)\n";
  return 0;
}

struct IdentifyOpts {
  CommonOpts common;
  std::string gallery;
  std::string probes;
  std::string model;
  std::size_t top_k = 5;
  unsigned workers = 1;
  std::string out;
};

int run_identify(const CLI::App&, const IdentifyOpts& opts) {
  std::vector<sm::Template> gallery = sm::read_templates(opts.gallery);
  std::vector<sm::Template> probes = sm::read_templates(opts.probes);
  sm::CascadeModel model = sm::read_model(opts.model);

  bool table = opts.common.format == "table";
  std::string out;
  if (table) out += "probe\trank\tid\tscore\tstages_passed\trejected_at\n";
  for (const sm::Template& probe : probes) {
    auto ranked =
        sm::identify(probe, gallery, model, opts.top_k, opts.workers);
    if (!table) out += "probe " + probe.id + ":\n";
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      const sm::RankedMatch& m = ranked[r];
      std::string rejected_at = m.result.rejected_at
                                    ? std::to_string(*m.result.rejected_at)
                                    : std::string("-");
      if (table) {
        out += probe.id + "\t" + std::to_string(r + 1) + "\t" + m.id + "\t" +
               sm::detail::format_double(m.result.score) + "\t" +
               std::to_string(m.result.stages_passed) + "\t" + rejected_at +
               "\n";
      } else {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.6f", m.result.score);
        out += "  " + std::to_string(r + 1) + ". " + m.id + " score " + buf +
               " stages " + std::to_string(m.result.stages_passed);
        if (m.result.rejected) out += " (rejected at " + rejected_at + ")";
        out += "\n";
      }
    }
  }
  write_text_output(opts.out, out);
  return 0;
}

struct BenchOpts {
  CommonOpts common;
  std::string gallery;
  std::string probes;
  std::string model;
  unsigned repeats = 3;
  bool truncation = false;
  std::string distractors;
  std::vector<std::size_t> scaling_counts;
  std::string out;
};

int run_bench(const CLI::App& cmd, const BenchOpts& opts) {
  std::vector<sm::Template> gallery = sm::read_templates(opts.gallery);
  std::vector<sm::Template> probes = sm::read_templates(opts.probes);
  sm::CascadeModel model = sm::read_model(opts.model);

  sm::RunProvenance provenance{opts.common.seed,
                               sm::digest_hex(effective_config(cmd))};
  sm::BenchReport report =
      sm::run_benchmark(gallery, probes, model, opts.repeats, provenance);
  std::string out = format_report(report, opts.common.format);

  if (opts.truncation) {
    out += opts.common.format == "table" ? "\n" : "\ntruncation curve:\n";
    out += format_truncation_curve(
        sm::truncation_curve(gallery, probes, model), opts.common.format);
  }
  if (!opts.distractors.empty()) {
    if (opts.scaling_counts.empty()) {
      sm::raise(sm::ErrorKind::invalid_argument,
                "bench: --distractors needs --scaling-counts");
    }
    std::vector<sm::Template> distractors =
        sm::read_templates(opts.distractors);
    out += opts.common.format == "table" ? "\n" : "\ngallery scaling:\n";
    out += format_gallery_scaling(
        sm::gallery_scaling(gallery, probes, distractors, opts.scaling_counts,
                            model),
        opts.common.format);
  }
  write_text_output(opts.out, out);
  return 0;
}

struct TruncateOpts {
  CommonOpts common;
  std::string model;
  std::size_t keep_stages = 0;
  std::string out;
  std::string templates;
  std::string templates_out;
};

int run_truncate(const CLI::App& cmd, const TruncateOpts& opts) {
  sm::CascadeModel model = sm::read_model(opts.model);
  sm::CascadeModel kept = sm::truncate_model(model, opts.keep_stages);
  fs::path out = resolve_out(opts.common, opts.out, "model-truncated.txt");
  auto comments =
      provenance_comments(cmd, opts.common, {fs::path(opts.model)});
  sm::write_model(out, kept, comments);
  std::cout << "wrote " << out.string() << " (" << kept.plan.stage_count()
            << " stages, dim " << kept.plan.dim() << ")\n";

  if (!opts.templates.empty()) {
    if (opts.templates_out.empty()) {
      sm::raise(sm::ErrorKind::invalid_argument,
                "truncate: --templates needs --templates-out");
    }
    std::vector<sm::Template> templates = sm::read_templates(opts.templates);
    std::vector<sm::Template> cut;
    cut.reserve(templates.size());
    for (const sm::Template& t : templates) {
      cut.push_back(sm::truncate_template(t, kept.plan.dim()));
    }
    std::uint64_t bytes = sm::write_templates(opts.templates_out, cut);
    write_meta(opts.templates_out, cmd, opts.common,
               {fs::path(opts.model), fs::path(opts.templates)});
    std::cout << "wrote " << opts.templates_out << " (" << cut.size()
              << " templates, dim " << kept.plan.dim() << ", " << bytes
              << " bytes)\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{std::string(kToolVersion) +
               ": staged cosine identification pipeline"};
  app.set_config("--config", "", "Read options from an INI/TOML file");
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  GenOpts gen;
  CLI::App* gen_cmd =
      app.add_subcommand("gen", "Generate a seeded synthetic dataset");
  add_common(gen_cmd, gen.common);
  gen_cmd->add_option("--ids", gen.ids, "Identity count")
      ->capture_default_str();
  gen_cmd->add_option("--samples", gen.samples, "Samples per identity")
      ->capture_default_str();
  gen_cmd->add_option("--dim", gen.dim, "Raw feature dimension")
      ->capture_default_str();
  gen_cmd->add_option("--sigma", gen.sigma, "Within-class noise sigma")
      ->capture_default_str();
  gen_cmd->add_option("--id-prefix", gen.prefix, "Identity label prefix")
      ->capture_default_str();
  gen_cmd
      ->add_option("--mean-decay", gen.mean_decay,
                   "Geometric per-dimension class-mean scale in (0, 1]")
      ->capture_default_str();
  gen_cmd
      ->add_option("--equal-blocks", gen.blocks,
                   "Comma-separated block sizes (summing to --dim) whose "
                   "class-mean energy is pinned to its expectation")
      ->delimiter(',');
  gen_cmd->add_option("--out", gen.out, "Dataset output path");
  gen_cmd->add_option("--projection", gen.projection,
                      "Projection file; also emit a gallery/probe split");
  gen_cmd->add_option("--gallery-out", gen.gallery_out,
                      "Gallery template output path");
  gen_cmd->add_option("--probes-out", gen.probes_out,
                      "Probe template output path");

  TrainLdaOpts train;
  CLI::App* train_cmd =
      app.add_subcommand("train-lda", "Fit a discriminant projection");
  add_common(train_cmd, train.common);
  train_cmd->add_option("--data", train.data, "Input dataset file")
      ->required();
  train_cmd
      ->add_option("--dim-out", train.dim_out,
                   "Output dimension (0 = min(classes - 1, dim))")
      ->capture_default_str();
  train_cmd->add_option("--out", train.out, "Projection output path");

  LearnOpts learn;
  CLI::App* learn_cmd =
      app.add_subcommand("learn", "Learn cascade thresholds");
  add_common(learn_cmd, learn.common);
  learn_cmd->add_option("--data", learn.data, "Labeled dataset file")
      ->required();
  learn_cmd->add_option("--projection", learn.projection, "Projection file")
      ->required();
  learn_cmd->add_option("--stages", learn.stages, "Stage count")
      ->capture_default_str();
  learn_cmd
      ->add_option("--vr-base", learn.vr_base,
                   "Retention base; stage k targets base^(k+1)")
      ->capture_default_str();
  learn_cmd
      ->add_option("--max-pairs", learn.max_pairs,
                   "Cap on mined genuine pairs")
      ->capture_default_str();
  learn_cmd->add_option("--out", learn.out, "Model output path");

  IdentifyOpts identify;
  CLI::App* identify_cmd =
      app.add_subcommand("identify", "Rank gallery candidates per probe");
  add_common(identify_cmd, identify.common);
  identify_cmd->add_option("--gallery", identify.gallery, "Gallery templates")
      ->required();
  identify_cmd->add_option("--probes", identify.probes, "Probe templates")
      ->required();
  identify_cmd->add_option("--model", identify.model, "Cascade model file")
      ->required();
  identify_cmd->add_option("--top-k", identify.top_k, "Results per probe")
      ->capture_default_str();
  identify_cmd
      ->add_option("--workers", identify.workers,
                   "Worker threads for the gallery scan")
      ->capture_default_str();
  identify_cmd->add_option("--out", identify.out,
                           "Output path (default: stdout)");

  BenchOpts bench;
  CLI::App* bench_cmd = app.add_subcommand(
      "bench", "Measure linear vs cascaded identification");
  add_common(bench_cmd, bench.common);
  bench_cmd->add_option("--gallery", bench.gallery, "Gallery templates")
      ->required();
  bench_cmd->add_option("--probes", bench.probes, "Probe templates")
      ->required();
  bench_cmd->add_option("--model", bench.model, "Cascade model file")
      ->required();
  bench_cmd->add_option("--repeats", bench.repeats, "Timing repeats (median)")
      ->capture_default_str();
  bench_cmd->add_flag("--truncation", bench.truncation,
                      "Also run the stage-truncation curve");
  bench_cmd->add_option("--distractors", bench.distractors,
                        "Distractor templates for gallery scaling");
  bench_cmd
      ->add_option("--scaling-counts", bench.scaling_counts,
                   "Cumulative distractor counts for gallery scaling")
      ->delimiter(',');
  bench_cmd->add_option("--out", bench.out, "Output path (default: stdout)");

  TruncateOpts truncate;
  CLI::App* truncate_cmd = app.add_subcommand(
      "truncate", "Drop trailing cascade stages from a model");
  add_common(truncate_cmd, truncate.common);
  truncate_cmd->add_option("--model", truncate.model, "Cascade model file")
      ->required();
  truncate_cmd
      ->add_option("--keep-stages", truncate.keep_stages, "Stages to keep")
      ->required();
  truncate_cmd->add_option("--out", truncate.out, "Model output path");
  truncate_cmd->add_option("--templates", truncate.templates,
                           "Templates to truncate alongside the model");
  truncate_cmd->add_option("--templates-out", truncate.templates_out,
                           "Truncated template output path");

  try {
    app.parse(argc, argv);
    if (gen_cmd->parsed()) return run_gen(*gen_cmd, gen);
    if (train_cmd->parsed()) return run_train_lda(*train_cmd, train);
    if (learn_cmd->parsed()) return run_learn(*learn_cmd, learn);
    if (identify_cmd->parsed()) return run_identify(*identify_cmd, identify);
    if (bench_cmd->parsed()) return run_bench(*bench_cmd, bench);
    if (truncate_cmd->parsed()) return run_truncate(*truncate_cmd, truncate);
    std::cerr << "error (invalid_argument): no subcommand\n";
    return 2;
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const sm::Error& e) {
    std::cerr << "error (" << sm::to_string(e.kind()) << "): " << e.what()
              << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error (internal): " << e.what() << "\n";
    return 10;
  }
}
