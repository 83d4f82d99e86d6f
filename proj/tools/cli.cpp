#include "vfr/harness/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "vfr/errors.hpp"
#include "vfr/harness/config.hpp"
#include "vfr/harness/experiment.hpp"
#include "vfr/harness/gradcheck.hpp"

namespace vfr {

namespace {

const std::vector<std::string> kSubcommands = {"simulate",      "attack-eval", "train-ddpm",
                                               "calibrate-rho", "detect",      "gradcheck"};

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  std::string defense;  // "", "on" or "off"
};

void add_common(CLI::App* sub, Common& c, bool defense_flag) {
  sub->add_option("--config", c.config, "experiment config file");
  sub->add_option("--seed", c.seed, "master seed (overrides [run] seed)");
  sub->add_option("--out-dir", c.out_dir, "directory for all outputs");
  if (defense_flag) {
    sub->add_option("--defense", c.defense, "purify uploads (on|off)")
        ->check(CLI::IsMember({"on", "off"}));
  }
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config(c.config);
  if (c.seed) cfg.set_seed(*c.seed);
  if (c.defense == "on") cfg.defense.enabled = true;
  if (c.defense == "off") cfg.defense.enabled = false;
  return cfg;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  return f;
}

void save_prepared(const std::filesystem::path& dir, const PreparedDefense& d) {
  save_denoiser(d.denoiser, dir / "denoiser.gdm");
  if (!d.calibration.similarities.empty()) {
    auto f = open_out(dir / "calibration.csv");
    write_calibration_csv(f, d.calibration);
  }
}

int simulate(const Common& c, const std::vector<double>& xi, std::ostream& out) {
  ExperimentConfig cfg = resolve(c);
  if (xi.size() > 1) throw InvalidConfig("simulate takes a single --xi");
  if (!xi.empty()) cfg.attack.xi = xi.front();
  const std::filesystem::path dir = c.out_dir;
  std::filesystem::create_directories(dir);
  const World world = build_world(cfg.world);
  const Extractor extractor = make_extractor(cfg);
  std::optional<PreparedDefense> prepared;
  std::unique_ptr<GdmpdDefense> defense;
  if (cfg.defense.enabled) {
    prepared = prepare_defense(cfg, extractor, &out);
    save_prepared(dir, *prepared);
    defense = std::make_unique<GdmpdDefense>(prepared->denoiser, prepared->schedule, extractor,
                                             prepared->rho, prepared->lambda, prepared->seed);
  }
  const ExperimentResult result = run_experiment(cfg, world, extractor, defense.get());
  write_run_outputs(dir, cfg, result);
  const auto& last = result.reports.back();
  char line[160];
  std::snprintf(line, sizeof line, "epochs %zu  final ER@%zu %.4f  peak ER %.4f  NDCG@%zu %.4f\n",
                result.reports.size(), cfg.fed.er_k, last.er,
                peak_er_after(result.reports, cfg.fed.attack_start_epoch), cfg.fed.ndcg_k,
                last.ndcg);
  out << line;
  if (result.audit_violations > 0) {
    out << result.audit_violations << " uploaded images violate the perturbation budget\n";
    return 1;
  }
  return 0;
}

int attack_eval(const Common& c, std::vector<double> epsilons, std::vector<double> xis,
                std::ostream& out) {
  ExperimentConfig cfg = resolve(c);
  if (epsilons.empty()) epsilons = {cfg.attack.epsilon};
  if (xis.empty()) xis = {cfg.attack.xi};
  std::vector<bool> settings{false};
  if (cfg.defense.enabled) settings.push_back(true);
  const Sweep sweep = sweep_attack(cfg, epsilons, xis, settings, &out);
  const std::filesystem::path dir = c.out_dir;
  {
    auto f = open_out(dir / "sweep.csv");
    write_sweep_csv(f, sweep, SweepValue::PeakEr);
  }
  {
    auto f = open_out(dir / "sweep_ndcg.csv");
    write_sweep_csv(f, sweep, SweepValue::FinalNdcg);
  }
  {
    auto f = open_out(dir / "config.cfg");
    write_config(f, cfg);
  }
  write_sweep_csv(out, sweep, SweepValue::PeakEr);
  return 0;
}

int train_ddpm(const Common& c, std::ostream& out) {
  ExperimentConfig cfg = resolve(c);
  cfg.defense.denoiser.clear();
  cfg.defense.rho = 0.0;  // training only
  const Extractor extractor = make_extractor(cfg);
  const PreparedDefense d = prepare_defense(cfg, extractor, &out);
  const std::filesystem::path dir = c.out_dir;
  std::filesystem::create_directories(dir);
  save_denoiser(d.denoiser, dir / "denoiser.gdm");
  auto f = open_out(dir / "denoiser_loss.csv");
  f << "step,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < d.training_losses.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.8f\n", i + 1, d.training_losses[i]);
    f << buf;
  }
  out << "wrote " << (dir / "denoiser.gdm").string() << '\n';
  return 0;
}

int calibrate(const Common& c, const std::string& denoiser, std::ostream& out) {
  ExperimentConfig cfg = resolve(c);
  if (!denoiser.empty()) cfg.defense.denoiser = denoiser;
  cfg.defense.rho.reset();
  const Extractor extractor = make_extractor(cfg);
  const PreparedDefense d = prepare_defense(cfg, extractor, &out);
  save_prepared(c.out_dir, d);
  char buf[64];
  std::snprintf(buf, sizeof buf, "rho %.6f over %zu images\n", d.rho, d.calibration.similarities.size());
  out << buf;
  return 0;
}

int detect_dir(const Common& c, const std::string& images, const std::string& denoiser,
               std::optional<double> rho, std::ostream& out) {
  ExperimentConfig cfg = resolve(c);
  if (!denoiser.empty()) cfg.defense.denoiser = denoiser;
  if (rho) cfg.defense.rho = rho;
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(images)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ppm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw EmptyCorpus("no .ppm files in " + images);
  const Extractor extractor = make_extractor(cfg);
  const PreparedDefense d = prepare_defense(cfg, extractor, &out);
  auto f = open_out(std::filesystem::path(c.out_dir) / "detection.csv");
  f << "file,similarity,rho,verdict\n";
  std::size_t flagged = 0;
  char buf[64];
  for (std::size_t i = 0; i < files.size(); ++i) {
    ImageAsset img = load_ppm(files[i], cfg.extractor.image_side, cfg.extractor.image_side);
    img.item_id = i;
    const Verdict v = detect(img, d.denoiser, d.schedule, extractor, d.rho, d.lambda,
                             derive_seed(d.seed, "detect", i));
    flagged += v.adversarial ? 1 : 0;
    std::snprintf(buf, sizeof buf, ",%.6f,%.6f,", v.similarity, d.rho);
    f << files[i].filename().string() << buf << (v.adversarial ? "adversarial" : "clean") << '\n';
  }
  out << flagged << " of " << files.size() << " images flagged adversarial\n";
  return 0;
}

int gradcheck(std::size_t seeds, std::uint64_t seed, double tolerance, std::ostream& out) {
  const GradcheckReport report = run_gradcheck(seeds, seed);
  char buf[128];
  for (const auto& c : report.cases) {
    std::snprintf(buf, sizeof buf, "%-28s %5zu seeds  worst rel err %.3e  %s\n", c.name.c_str(),
                  c.checks, c.worst, c.worst < tolerance ? "ok" : "FAIL");
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "worst %.3e (tolerance %.0e)\n", report.worst(), tolerance);
  out << buf;
  return report.passed(tolerance) ? 0 : 1;
}

int exit_code_for(const Error& e) {
  static const std::vector<std::string> usage = {"ConfigParseError", "InvalidConfig",
                                                 "UnknownSubcommand", "InvalidScheduleBounds"};
  static const std::vector<std::string> input = {"IoError", "UnsupportedFormat",
                                                 "CorruptCheckpoint", "MalformedLine",
                                                 "DimensionMismatch", "EmptyCorpus"};
  if (std::find(usage.begin(), usage.end(), e.category()) != usage.end()) return 2;
  if (std::find(input.begin(), input.end(), e.category()) != input.end()) return 3;
  return 4;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Federated visually-aware recommender attack and purification toolkit", "frg"};
  app.require_subcommand(1);

  Common common;
  std::vector<double> xis;
  std::vector<double> epsilons;
  std::string denoiser;
  std::string images;
  std::optional<double> rho;
  std::size_t seeds = 100;
  std::uint64_t gc_seed = 1;
  double tolerance = 1e-4;

  auto* sim = app.add_subcommand("simulate", "run one federated experiment");
  add_common(sim, common, true);
  sim->add_option("--xi", xis, "malicious user share")->delimiter(',');

  auto* eval = app.add_subcommand("attack-eval", "peak exposure over an epsilon/xi grid");
  add_common(eval, common, true);
  eval->add_option("--epsilons", epsilons, "comma-separated perturbation budgets")->delimiter(',');
  eval->add_option("--xi", xis, "comma-separated malicious shares")->delimiter(',');

  auto* train = app.add_subcommand("train-ddpm", "train the purification denoiser");
  add_common(train, common, false);

  auto* cal = app.add_subcommand("calibrate-rho", "calibrate the detection threshold");
  add_common(cal, common, false);
  cal->add_option("--denoiser", denoiser, "trained denoiser checkpoint");

  auto* det = app.add_subcommand("detect", "screen every .ppm image in a directory");
  add_common(det, common, false);
  det->add_option("images", images, "directory of images")->required();
  det->add_option("--denoiser", denoiser, "trained denoiser checkpoint");
  det->add_option("--rho", rho, "fixed threshold (calibrated when absent)");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every gradient");
  gc->add_option("--seeds", seeds, "random draws per case");
  gc->add_option("--seed", gc_seed, "base seed");
  gc->add_option("--tolerance", tolerance, "maximum relative error");

  try {
    if (argc > 1 && argv[1][0] != '-' &&
        std::find(kSubcommands.begin(), kSubcommands.end(), argv[1]) == kSubcommands.end()) {
      throw UnknownSubcommand(std::string("unknown subcommand '") + argv[1] + "'");
    }
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return 0;
    } catch (const CLI::ParseError& e) {
      const auto* target = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
      err << "error [Usage]: " << e.what() << '\n' << target->help();
      return 2;
    }
    if (sim->parsed()) return simulate(common, xis, out);
    if (eval->parsed()) return attack_eval(common, epsilons, xis, out);
    if (train->parsed()) return train_ddpm(common, out);
    if (cal->parsed()) return calibrate(common, denoiser, out);
    if (det->parsed()) return detect_dir(common, images, denoiser, rho, out);
    if (gc->parsed()) return gradcheck(seeds, gc_seed, tolerance, out);
    return 2;
  } catch (const Error& e) {
    err << "error [" << e.category() << "]: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error [IoError]: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    err << "error [Internal]: " << e.what() << '\n';
    return 4;
  }
}

}  // namespace vfr
