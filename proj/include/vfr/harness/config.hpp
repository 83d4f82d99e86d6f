#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "vfr/attacks/attacks.hpp"
#include "vfr/dataio/synth.hpp"
#include "vfr/fedsim/simulation.hpp"
#include "vfr/vision/extractor.hpp"

namespace vfr {

struct WorldConfig {
  // "synth" or "files"
  std::string source = "synth";
  std::filesystem::path interactions;
  // Directory of <item_id>.ppm files (dense ids); synthesised when empty.
  std::filesystem::path images;
  SynthParams synth;
  std::size_t negative_ratio = 4;
  std::size_t num_targets = 1;
};

struct DefenseConfig {
  bool enabled = false;
  std::size_t steps = 1000;
  double beta1 = 1e-4;
  double betaT = 2e-2;
  double lambda = 1000.0;
  // Fixed threshold; calibrated on clean images when absent.
  std::optional<double> rho;
  std::size_t calibration_images = 1000;
  std::size_t train_steps = 20000;
  std::size_t train_images = 1000;
  // Pretrained denoiser; trained from scratch when empty.
  std::filesystem::path denoiser;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  WorldConfig world;
  std::uint64_t extractor_seed = 7;
  ExtractorConfig extractor;
  FedConfig fed;
  AttackConfig attack;
  DefenseConfig defense;

  // Propagates the run seed into every component.
  void set_seed(std::uint64_t s);
};

// `key = value` lines grouped under `[section]` headers; `#` starts a comment.
// Sections: run, world, extractor, federated, attack, defense, metrics.
ExperimentConfig parse_config(std::istream& in);
ExperimentConfig load_config(const std::filesystem::path& path);

// Canonical text form; parse_config(write_config(c)) reproduces c.
void write_config(std::ostream& out, const ExperimentConfig& config);

}  // namespace vfr
