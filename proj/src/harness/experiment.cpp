#include "vfr/harness/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "vfr/dataio/synth.hpp"
#include "vfr/errors.hpp"

namespace vfr {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string cell(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::size_t categories_of(const WorldConfig& w) {
  return w.source == "synth" ? w.synth.num_categories : 4;
}

}  // namespace

World build_world(const WorldConfig& config) {
  if (config.source == "synth") {
    return make_world(config.synth, config.negative_ratio, config.num_targets);
  }
  if (config.source != "files") throw InvalidConfig("unknown world source '" + config.source + "'");
  World world = make_world(load_interactions(config.interactions), config.synth.seed,
                           config.synth.image_side, config.negative_ratio, config.num_targets);
  if (!config.images.empty()) {
    for (std::size_t j = 0; j < world.images.size(); ++j) {
      const auto path = config.images / (std::to_string(j) + ".ppm");
      ImageAsset img = load_ppm(path, config.synth.image_side, config.synth.image_side);
      img.item_id = j;
      world.images[j] = std::move(img);
    }
  }
  return world;
}

std::vector<ImageAsset> training_corpus(const ExperimentConfig& config) {
  return synth_clean_corpus(derive_seed(config.seed, "denoiser_corpus"), config.defense.train_images,
                            config.extractor.image_side, categories_of(config.world));
}

std::vector<ImageAsset> calibration_corpus(const ExperimentConfig& config) {
  return synth_clean_corpus(derive_seed(config.seed, "calibration_corpus"),
                            config.defense.calibration_images, config.extractor.image_side,
                            categories_of(config.world));
}

std::vector<ImageAsset> heldout_corpus(const ExperimentConfig& config, std::size_t count) {
  return synth_clean_corpus(derive_seed(config.seed, "heldout_corpus"), count,
                            config.extractor.image_side, categories_of(config.world));
}

Extractor make_extractor(const ExperimentConfig& config) {
  return Extractor(config.extractor_seed, config.extractor);
}

PreparedDefense prepare_defense(const ExperimentConfig& config, const Extractor& extractor,
                                std::ostream* log) {
  const DefenseConfig& d = config.defense;
  PreparedDefense out;
  out.schedule = build_schedule(d.steps, d.beta1, d.betaT);
  out.lambda = d.lambda;
  out.seed = derive_seed(config.seed, "defense");
  if (!d.denoiser.empty()) {
    out.denoiser = load_denoiser(d.denoiser);
    if (log) *log << "loaded denoiser from " << d.denoiser.string() << '\n';
  } else {
    std::vector<Tensor> images;
    for (const auto& img : training_corpus(config)) images.push_back(img.normalized());
    if (images.empty()) throw EmptyCorpus("the denoiser needs at least one training image");
    DenoiserTraining trained =
        train_denoiser(images, out.schedule, d.train_steps, derive_seed(config.seed, "denoiser"));
    out.denoiser = std::move(trained.denoiser);
    out.training_losses = std::move(trained.losses);
    if (log) {
      *log << "trained denoiser for " << d.train_steps << " steps on " << images.size()
           << " images\n";
    }
  }
  if (d.rho) {
    out.rho = *d.rho;
  } else {
    out.calibration =
        calibrate_rho(out.denoiser, out.schedule, calibration_corpus(config), extractor,
                      d.lambda, derive_seed(config.seed, "calibration"));
    out.rho = out.calibration.rho;
    if (log) *log << "calibrated rho = " << cell(out.rho) << '\n';
  }
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const World& world,
                                const Extractor& extractor, ImageDefense* defense) {
  ExperimentResult result;
  std::unique_ptr<Attacker> attacker;
  if (config.attack.kind != AttackKind::None) {
    attacker = std::make_unique<Attacker>(config.attack, provider_for(world, config.attack.provider_id),
                                          world.catalog.num_users);
    result.cohort = attacker->cohort();
  }
  Simulation sim(config.fed, world, extractor, attacker.get(),
                 config.defense.enabled ? defense : nullptr);
  result.reports = sim.run();
  result.detections = sim.detection_log();
  result.targets = world.targets;
  result.final_params = sim.server().public_params;
  if (attacker) {
    result.audit = attacker->audit();
    result.audit_violations = attacker->violations();
  }
  return result;
}

void write_plot_script(std::ostream& out, const ExperimentConfig& config) {
  const auto er = "er_at_" + std::to_string(config.fed.er_k);
  const auto ndcg = "ndcg_at_" + std::to_string(config.fed.ndcg_k);
  out << "# gnuplot -p plots.gp\n"
      << "set datafile separator ','\n"
      << "set key autotitle columnhead\n"
      << "set xlabel 'epoch'\n"
      << "set terminal pngcairo size 900,400\n"
      << "set output 'rounds.png'\n"
      << "set multiplot layout 1,2\n"
      << "set yrange [0:1]\n"
      << "set title '" << er << "'\n"
      << "set arrow from " << config.fed.attack_start_epoch << ",0 to "
      << config.fed.attack_start_epoch << ",1 nohead dt 2\n"
      << "plot 'rounds.csv' using 1:2 with linespoints title '" << er << "'\n"
      << "unset arrow\n"
      << "set autoscale y\n"
      << "set title '" << ndcg << "'\n"
      << "plot 'rounds.csv' using 1:3 with linespoints title '" << ndcg << "'\n"
      << "unset multiplot\n";
}

void write_run_outputs(const std::filesystem::path& out_dir, const ExperimentConfig& config,
                       const ExperimentResult& result) {
  std::filesystem::create_directories(out_dir);
  auto open = [&](const char* name) {
    std::ofstream f(out_dir / name, std::ios::binary);
    if (!f) throw IoError("cannot write " + (out_dir / name).string());
    return f;
  };
  {
    auto f = open("rounds.csv");
    write_rounds_csv(f, result.reports, result.targets, std::string(to_string(config.attack.kind)),
                     config.defense.enabled ? "gdmpd" : "none", config.seed, config.fed.er_k,
                     config.fed.ndcg_k);
  }
  {
    auto f = open("detection.csv");
    write_detection_csv(f, result.detections);
  }
  {
    auto f = open("plots.gp");
    write_plot_script(f, config);
  }
  {
    auto f = open("config.cfg");
    write_config(f, config);
  }
  save_checkpoint(result.final_params, out_dir / "final.ckpt");
  if (!result.audit.empty()) {
    auto f = open("audit.csv");
    f << "item_id,epoch,linf,within_budget\n";
    for (const auto& a : result.audit) {
      f << a.item_id << ',' << a.epoch << ',' << cell(a.linf) << ',' << (a.within_budget ? 1 : 0)
        << '\n';
    }
  }
}

double peak_er_after(const std::vector<RoundReport>& reports, std::size_t start_epoch) {
  double peak = 0.0;
  for (const auto& r : reports) {
    if (r.epoch > start_epoch) peak = std::max(peak, r.er);
  }
  return peak;
}

std::optional<std::size_t> epochs_to_full_exposure(const std::vector<RoundReport>& reports,
                                                   std::size_t start_epoch) {
  for (const auto& r : reports) {
    if (r.epoch > start_epoch && r.er >= 1.0) return r.epoch - start_epoch;
  }
  return std::nullopt;
}

Sweep sweep_attack(const ExperimentConfig& config, const std::vector<double>& epsilons,
                   const std::vector<double>& xis, const std::vector<bool>& defense_settings,
                   std::ostream* log) {
  Sweep sweep;
  sweep.epsilons = epsilons;
  const World world = build_world(config.world);
  const Extractor extractor = make_extractor(config);
  std::optional<PreparedDefense> prepared;
  std::unique_ptr<GdmpdDefense> defense;
  if (std::find(defense_settings.begin(), defense_settings.end(), true) != defense_settings.end()) {
    prepared = prepare_defense(config, extractor, log);
    defense = std::make_unique<GdmpdDefense>(prepared->denoiser, prepared->schedule, extractor,
                                             prepared->rho, prepared->lambda, prepared->seed);
  }
  for (double xi : xis) {
    for (bool on : defense_settings) {
      SweepRow row;
      row.xi = xi;
      row.defense = on;
      row.setting = std::string(to_string(config.attack.kind)) + " xi=" + num(xi) +
                    " defense=" + (on ? "on" : "off");
      for (double eps : epsilons) {
        ExperimentConfig c = config;
        c.attack.xi = xi;
        c.attack.epsilon = eps;
        c.defense.enabled = on;
        const auto result = run_experiment(c, world, extractor, defense.get());
        row.peak_er.push_back(peak_er_after(result.reports, c.fed.attack_start_epoch));
        row.final_ndcg.push_back(result.reports.empty() ? 0.0 : result.reports.back().ndcg);
        if (log) {
          *log << row.setting << " eps=" << num(eps) << " peak_er=" << cell(row.peak_er.back())
               << '\n';
        }
      }
      sweep.rows.push_back(std::move(row));
    }
  }
  return sweep;
}

void write_sweep_csv(std::ostream& out, const Sweep& sweep, SweepValue value) {
  out << "setting,xi,defense";
  for (double e : sweep.epsilons) out << ",eps_" << num(e);
  out << '\n';
  for (const auto& row : sweep.rows) {
    out << row.setting << ',' << num(row.xi) << ',' << (row.defense ? "on" : "off");
    for (double v : value == SweepValue::PeakEr ? row.peak_er : row.final_ndcg) out << ',' << cell(v);
    out << '\n';
  }
}

}  // namespace vfr
