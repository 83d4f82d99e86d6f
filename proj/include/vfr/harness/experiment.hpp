#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vfr/attacks/attacks.hpp"
#include "vfr/fedsim/simulation.hpp"
#include "vfr/gdmpd/diffusion.hpp"
#include "vfr/harness/config.hpp"

namespace vfr {

World build_world(const WorldConfig& config);

// Clean corpora drawn from the catalog's image family but keyed away from it.
// Training, calibration and held-out corpora use distinct seed streams.
std::vector<ImageAsset> training_corpus(const ExperimentConfig& config);
std::vector<ImageAsset> calibration_corpus(const ExperimentConfig& config);
std::vector<ImageAsset> heldout_corpus(const ExperimentConfig& config, std::size_t count);

// Everything the server needs to purify and screen uploads.
struct PreparedDefense {
  Denoiser denoiser;
  NoiseSchedule schedule;
  DetectorCalibration calibration;  // empty similarities when rho was fixed
  double rho = 0.0;
  double lambda = 1000.0;
  std::uint64_t seed = 0;
  std::vector<double> training_losses;
};

// Loads the denoiser from config.defense.denoiser or trains one, then
// calibrates rho unless it is fixed. `log` receives progress lines.
PreparedDefense prepare_defense(const ExperimentConfig& config, const Extractor& extractor,
                                std::ostream* log = nullptr);

Extractor make_extractor(const ExperimentConfig& config);

struct ExperimentResult {
  std::vector<RoundReport> reports;
  std::vector<DetectionRecord> detections;
  std::vector<AuditEntry> audit;
  std::size_t audit_violations = 0;
  std::vector<std::size_t> targets;
  PublicParams final_params;
  std::size_t cohort = 0;
};

// One federated run. `defense` may be shared between runs (it caches
// purifications) and is used only when config.defense.enabled.
ExperimentResult run_experiment(const ExperimentConfig& config, const World& world,
                                const Extractor& extractor, ImageDefense* defense = nullptr);

// rounds.csv, detection.csv, final.ckpt, plots.gp and the effective config.
void write_run_outputs(const std::filesystem::path& out_dir, const ExperimentConfig& config,
                       const ExperimentResult& result);

void write_plot_script(std::ostream& out, const ExperimentConfig& config);

// Epoch-indexed summaries used by the sweep and the acceptance checks.
double peak_er_after(const std::vector<RoundReport>& reports, std::size_t start_epoch);
// Post-attack epochs until ER first reaches 1.0; nullopt when it never does.
std::optional<std::size_t> epochs_to_full_exposure(const std::vector<RoundReport>& reports,
                                                   std::size_t start_epoch);

struct SweepRow {
  std::string setting;  // e.g. "xi=0.05 defense=off"
  double xi = 0.0;
  bool defense = false;
  std::vector<double> peak_er;  // one per epsilon
  std::vector<double> final_ndcg;
};

struct Sweep {
  std::vector<double> epsilons;
  std::vector<SweepRow> rows;
};

// Peak post-attack ER for every (xi, defense, epsilon) combination.
Sweep sweep_attack(const ExperimentConfig& config, const std::vector<double>& epsilons,
                   const std::vector<double>& xis, const std::vector<bool>& defense_settings,
                   std::ostream* log = nullptr);

enum class SweepValue { PeakEr, FinalNdcg };

// setting,xi,defense then one eps_<e> column per epsilon.
void write_sweep_csv(std::ostream& out, const Sweep& sweep, SweepValue value = SweepValue::PeakEr);

}  // namespace vfr
