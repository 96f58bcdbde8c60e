#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stagematch/core.hpp"
#include "stagematch/error.hpp"
#include "stagematch/lda.hpp"
#include "stagematch/rng.hpp"

namespace stagematch {

// Seeded synthetic identity-embedding generator. Each identity has a
// Gaussian class-mean vector; samples are the mean plus isotropic Gaussian
// noise. mean_decay and equal_energy_blocks optionally shape how class-mean
// energy falls across dimensions (defaults leave means i.i.d. standard
// normal): mean_decay geometrically scales the per-dimension standard
// deviation, and equal_energy_blocks pins each listed block of dimensions to
// its expected energy, removing per-identity energy luck. Shaping is useful
// when downstream consumers depend on every identity carrying signal in the
// leading dimensions, not just on average.
struct SynthConfig {
  std::size_t num_ids = 0;
  std::size_t samples_per_id = 0;
  std::size_t dim_raw = 0;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  std::string id_prefix = "id";
  double mean_decay = 1.0;                       // in (0, 1]
  std::vector<std::size_t> equal_energy_blocks;  // sizes, sum == dim_raw
};

inline void validate_synth_config(const SynthConfig& cfg) {
  if (cfg.num_ids < 2) {
    raise(ErrorKind::invalid_argument, "synth: num_ids must be >= 2");
  }
  if (cfg.samples_per_id < 2) {
    raise(ErrorKind::invalid_argument, "synth: samples_per_id must be >= 2");
  }
  if (cfg.dim_raw == 0) {
    raise(ErrorKind::invalid_argument, "synth: dim_raw must be >= 1");
  }
  if (!(cfg.noise_sigma > 0.0) || !std::isfinite(cfg.noise_sigma)) {
    raise(ErrorKind::invalid_argument, "synth: noise_sigma must be > 0");
  }
  if (cfg.id_prefix.empty()) {
    raise(ErrorKind::invalid_argument, "synth: id_prefix must be nonempty");
  }
  if (!(cfg.mean_decay > 0.0) || cfg.mean_decay > 1.0) {
    raise(ErrorKind::invalid_argument, "synth: mean_decay outside (0, 1]");
  }
  if (!cfg.equal_energy_blocks.empty()) {
    std::size_t total = 0;
    for (std::size_t b : cfg.equal_energy_blocks) {
      if (b == 0) {
        raise(ErrorKind::invalid_argument, "synth: zero-sized energy block");
      }
      total += b;
    }
    if (total != cfg.dim_raw) {
      raise(ErrorKind::invalid_argument,
            "synth: energy block sizes must sum to dim_raw");
    }
  }
  double rows = static_cast<double>(cfg.num_ids) *
                static_cast<double>(cfg.samples_per_id);
  if (rows * static_cast<double>(cfg.dim_raw) > 4e9) {
    raise(ErrorKind::invalid_argument, "synth: dataset too large");
  }
}

// Deterministic generation: one SplitMix64 stream seeded with cfg.seed, per
// identity the mean draws first, then each sample's noise draws. Gaussian
// spares carry across draws, so the byte layout is fixed by (config, seed).
inline LabeledDataset generate(const SynthConfig& cfg) {
  validate_synth_config(cfg);
  const std::size_t rows = cfg.num_ids * cfg.samples_per_id;
  const std::size_t d = cfg.dim_raw;

  LabeledDataset data;
  data.dim_raw = d;
  data.features.resize(rows * d);
  data.labels.reserve(rows);

  std::vector<double> scale(d, 1.0);
  if (cfg.mean_decay < 1.0) {
    for (std::size_t i = 1; i < d; ++i) {
      scale[i] = scale[i - 1] * cfg.mean_decay;
    }
  }
  std::vector<std::pair<std::size_t, double>> blocks;  // (end, target energy)
  if (!cfg.equal_energy_blocks.empty()) {
    std::size_t start = 0;
    for (std::size_t size : cfg.equal_energy_blocks) {
      double energy = 0.0;
      for (std::size_t i = start; i < start + size; ++i) {
        energy += scale[i] * scale[i];
      }
      blocks.emplace_back(start + size, energy);
      start += size;
    }
  }

  SplitMix64 rng(cfg.seed);
  std::vector<double> mean(d);
  double* out = data.features.data();
  for (std::size_t id = 0; id < cfg.num_ids; ++id) {
    std::string label = cfg.id_prefix + "-" + std::to_string(id);
    for (std::size_t i = 0; i < d; ++i) {
      mean[i] = scale[i] * rng.next_gaussian();
    }
    std::size_t start = 0;
    for (const auto& [end, energy] : blocks) {
      double actual = 0.0;
      for (std::size_t i = start; i < end; ++i) actual += mean[i] * mean[i];
      if (actual == 0.0) {
        raise(ErrorKind::normalization,
              "synth: degenerate zero-energy block for identity " + label);
      }
      double factor = std::sqrt(energy / actual);
      for (std::size_t i = start; i < end; ++i) mean[i] *= factor;
      start = end;
    }
    for (std::size_t s = 0; s < cfg.samples_per_id; ++s) {
      data.labels.push_back(label);
      for (std::size_t i = 0; i < d; ++i) {
        *out++ = mean[i] + cfg.noise_sigma * rng.next_gaussian();
      }
    }
  }
  return data;
}

// Projects every dataset row into match-ready templates (label becomes the
// template id).
inline std::vector<Template> project_dataset(const LabeledDataset& data,
                                             const LdaProjection& p) {
  validate_dataset(data);
  std::size_t n = data.sample_count();
  std::vector<double> projected =
      project_rows(p, std::span<const double>(data.features), n);
  std::vector<Template> templates;
  templates.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::span<const double> row(projected.data() + i * p.dim_out, p.dim_out);
    templates.push_back(make_template(data.labels[i], row));
  }
  return templates;
}

// All within-class template pairs, capped at max_pairs, in deterministic
// order: classes in first-appearance order, member index pairs ascending.
inline std::vector<PairSample> mine_genuine_pairs(const LabeledDataset& data,
                                                  const LdaProjection& p,
                                                  std::size_t max_pairs) {
  if (max_pairs == 0) {
    raise(ErrorKind::invalid_argument, "mine_genuine_pairs: max_pairs == 0");
  }
  std::vector<Template> templates = project_dataset(data, p);
  ClassIndex classes = group_by_label(data);

  std::vector<PairSample> pairs;
  bool any_pairable = false;
  for (const auto& members : classes.members) {
    if (members.size() < 2) continue;
    any_pairable = true;
    for (std::size_t a = 0; a < members.size(); ++a) {
      for (std::size_t b = a + 1; b < members.size(); ++b) {
        if (pairs.size() == max_pairs) return pairs;
        pairs.push_back(build_pair_sample(
            std::span<const float>(templates[members[a]].features),
            std::span<const float>(templates[members[b]].features), true));
      }
    }
  }
  if (!any_pairable) {
    raise(ErrorKind::invalid_argument,
          "mine_genuine_pairs: no class has 2 or more samples");
  }
  return pairs;
}

struct GalleryProbeSplit {
  std::vector<Template> gallery;
  std::vector<Template> probes;
};

// One seeded-random sample per class goes to the gallery; the rest become
// probes. Every class must have at least 2 samples.
inline GalleryProbeSplit split_gallery_probe(const LabeledDataset& data,
                                             const LdaProjection& p,
                                             std::uint64_t seed) {
  std::vector<Template> templates = project_dataset(data, p);
  ClassIndex classes = group_by_label(data);
  for (std::size_t ci = 0; ci < classes.class_count(); ++ci) {
    if (classes.members[ci].size() < 2) {
      raise(ErrorKind::invalid_argument,
            "split_gallery_probe: class '" + classes.labels[ci] +
                "' has a single sample");
    }
  }

  SplitMix64 rng(seed);
  GalleryProbeSplit split;
  split.gallery.reserve(classes.class_count());
  split.probes.reserve(templates.size() - classes.class_count());
  for (const auto& members : classes.members) {
    std::size_t pick = static_cast<std::size_t>(rng.next() % members.size());
    for (std::size_t j = 0; j < members.size(); ++j) {
      if (j == pick) {
        split.gallery.push_back(templates[members[j]]);
      } else {
        split.probes.push_back(templates[members[j]]);
      }
    }
  }
  return split;
}

}  // namespace stagematch
