#include "vfr/harness/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>

#include "vfr/errors.hpp"

namespace vfr {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Shortest text that parses back to the same double.
std::string num(double v) {
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

struct Line {
  std::size_t no;
  const std::string& value;

  [[noreturn]] void fail(const std::string& what) const { throw ConfigParseError(no, what); }

  double real() const {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(value, &used);
    } catch (const std::exception&) {
      fail("expected a number, got '" + value + "'");
    }
    if (used != value.size()) fail("expected a number, got '" + value + "'");
    return v;
  }

  std::uint64_t whole() const {
    if (value.empty() || value.find_first_not_of("0123456789") != std::string::npos) {
      fail("expected a non-negative integer, got '" + value + "'");
    }
    try {
      return std::stoull(value);
    } catch (const std::exception&) {
      fail("integer out of range: '" + value + "'");
    }
  }

  bool flag() const {
    if (value == "true" || value == "on" || value == "yes" || value == "1") return true;
    if (value == "false" || value == "off" || value == "no" || value == "0") return false;
    fail("expected on/off, got '" + value + "'");
  }
};

using Setter = std::function<void(ExperimentConfig&, const Line&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"run.seed", [](ExperimentConfig& c, const Line& l) { c.set_seed(l.whole()); }},

      {"world.source",
       [](ExperimentConfig& c, const Line& l) {
         if (l.value != "synth" && l.value != "files") l.fail("world.source is synth or files");
         c.world.source = l.value;
       }},
      {"world.interactions", [](ExperimentConfig& c, const Line& l) { c.world.interactions = l.value; }},
      {"world.images", [](ExperimentConfig& c, const Line& l) { c.world.images = l.value; }},
      {"world.seed", [](ExperimentConfig& c, const Line& l) { c.world.synth.seed = l.whole(); }},
      {"world.users", [](ExperimentConfig& c, const Line& l) { c.world.synth.num_users = l.whole(); }},
      {"world.items", [](ExperimentConfig& c, const Line& l) { c.world.synth.num_items = l.whole(); }},
      {"world.density", [](ExperimentConfig& c, const Line& l) { c.world.synth.density = l.real(); }},
      {"world.popularity_exponent",
       [](ExperimentConfig& c, const Line& l) { c.world.synth.popularity_exponent = l.real(); }},
      {"world.categories",
       [](ExperimentConfig& c, const Line& l) { c.world.synth.num_categories = l.whole(); }},
      {"world.category_affinity",
       [](ExperimentConfig& c, const Line& l) { c.world.synth.category_affinity = l.real(); }},
      {"world.image_side",
       [](ExperimentConfig& c, const Line& l) {
         c.world.synth.image_side = l.whole();
         c.extractor.image_side = c.world.synth.image_side;
       }},
      {"world.negative_ratio",
       [](ExperimentConfig& c, const Line& l) {
         c.world.negative_ratio = l.whole();
         c.attack.negative_ratio = c.world.negative_ratio;
       }},
      {"world.targets", [](ExperimentConfig& c, const Line& l) { c.world.num_targets = l.whole(); }},

      {"extractor.seed", [](ExperimentConfig& c, const Line& l) { c.extractor_seed = l.whole(); }},
      {"extractor.output_scale",
       [](ExperimentConfig& c, const Line& l) { c.extractor.output_scale = l.real(); }},

      {"federated.model",
       [](ExperimentConfig& c, const Line& l) {
         try {
           c.fed.model = parse_model_kind(l.value);
         } catch (const InvalidConfig& e) {
           l.fail(e.what());
         }
       }},
      {"federated.epochs", [](ExperimentConfig& c, const Line& l) { c.fed.global_epochs = l.whole(); }},
      {"federated.lr", [](ExperimentConfig& c, const Line& l) { c.fed.lr = l.real(); }},
      {"federated.local_epochs",
       [](ExperimentConfig& c, const Line& l) { c.fed.local_epochs = l.whole(); }},
      {"federated.client_fraction",
       [](ExperimentConfig& c, const Line& l) {
         const double f = l.real();
         if (!(f > 0.0 && f <= 1.0)) l.fail("client_fraction must lie in (0, 1]");
         c.fed.client_fraction = f;
       }},
      {"federated.threads", [](ExperimentConfig& c, const Line& l) { c.fed.threads = l.whole(); }},
      {"federated.screen_initial_catalog",
       [](ExperimentConfig& c, const Line& l) { c.fed.screen_initial_catalog = l.flag(); }},

      {"attack.kind",
       [](ExperimentConfig& c, const Line& l) {
         try {
           c.attack.kind = parse_attack_kind(l.value);
         } catch (const InvalidConfig& e) {
           l.fail(e.what());
         }
       }},
      {"attack.xi",
       [](ExperimentConfig& c, const Line& l) {
         const double xi = l.real();
         if (!(xi >= 0.0 && xi <= 1.0)) l.fail("xi must lie in [0, 1]");
         c.attack.xi = xi;
       }},
      {"attack.epsilon",
       [](ExperimentConfig& c, const Line& l) {
         const double e = l.real();
         if (!(e >= 0.0)) l.fail("epsilon must be non-negative");
         c.attack.epsilon = e;
       }},
      {"attack.start_epoch",
       [](ExperimentConfig& c, const Line& l) {
         const auto s = l.whole();
         if (s < 1) l.fail("start_epoch must be at least 1");
         c.fed.attack_start_epoch = s;
       }},
      {"attack.synthetic_positives",
       [](ExperimentConfig& c, const Line& l) { c.attack.synthetic_positives = l.whole(); }},
      {"attack.fit_steps", [](ExperimentConfig& c, const Line& l) { c.attack.fit_steps = l.whole(); }},
      {"attack.fit_lr", [](ExperimentConfig& c, const Line& l) { c.attack.fit_lr = l.real(); }},
      {"attack.top_k", [](ExperimentConfig& c, const Line& l) { c.attack.top_k = l.whole(); }},
      {"attack.pgd_iterations",
       [](ExperimentConfig& c, const Line& l) { c.attack.pgd_iterations = l.whole(); }},
      {"attack.popularity_top_p",
       [](ExperimentConfig& c, const Line& l) { c.attack.popularity_top_p = l.whole(); }},
      {"attack.provider_id",
       [](ExperimentConfig& c, const Line& l) { c.attack.provider_id = l.whole(); }},
      {"attack.audit",
       [](ExperimentConfig& c, const Line& l) {
         if (l.value.empty()) {
           c.attack.audit_dir.reset();
         } else {
           c.attack.audit_dir = l.value;
         }
       }},

      {"defense.enabled", [](ExperimentConfig& c, const Line& l) { c.defense.enabled = l.flag(); }},
      {"defense.steps", [](ExperimentConfig& c, const Line& l) { c.defense.steps = l.whole(); }},
      {"defense.beta1", [](ExperimentConfig& c, const Line& l) { c.defense.beta1 = l.real(); }},
      {"defense.beta_T", [](ExperimentConfig& c, const Line& l) { c.defense.betaT = l.real(); }},
      {"defense.lambda", [](ExperimentConfig& c, const Line& l) { c.defense.lambda = l.real(); }},
      {"defense.rho",
       [](ExperimentConfig& c, const Line& l) {
         if (l.value == "calibrate") {
           c.defense.rho.reset();
         } else {
           c.defense.rho = l.real();
         }
       }},
      {"defense.calibration_images",
       [](ExperimentConfig& c, const Line& l) { c.defense.calibration_images = l.whole(); }},
      {"defense.train_steps",
       [](ExperimentConfig& c, const Line& l) { c.defense.train_steps = l.whole(); }},
      {"defense.train_images",
       [](ExperimentConfig& c, const Line& l) { c.defense.train_images = l.whole(); }},
      {"defense.denoiser", [](ExperimentConfig& c, const Line& l) { c.defense.denoiser = l.value; }},

      {"metrics.er_k", [](ExperimentConfig& c, const Line& l) { c.fed.er_k = l.whole(); }},
      {"metrics.ndcg_k", [](ExperimentConfig& c, const Line& l) { c.fed.ndcg_k = l.whole(); }},
  };
  return table;
}

}  // namespace

void ExperimentConfig::set_seed(std::uint64_t s) {
  seed = s;
  world.synth.seed = s;
  fed.seed = s;
  attack.seed = s;
}

ExperimentConfig parse_config(std::istream& in) {
  ExperimentConfig config;
  std::string section = "run";
  std::string raw;
  std::size_t no = 0;
  while (std::getline(in, raw)) {
    ++no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigParseError(no, "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      static const char* known[] = {"run",     "world",   "extractor", "federated",
                                    "attack", "defense", "metrics"};
      if (std::find(std::begin(known), std::end(known), section) == std::end(known)) {
        throw ConfigParseError(no, "unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigParseError(no, "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigParseError(no, "empty key");
    const auto it = setters().find(section + "." + key);
    if (it == setters().end()) throw ConfigParseError(no, "unknown key '" + key + "' in [" + section + "]");
    it->second(config, Line{no, value});
  }
  if (config.world.source == "files" && config.world.interactions.empty()) {
    throw ConfigParseError(0, "world.source = files needs world.interactions");
  }
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigParseError(0, "cannot open config file " + path.string());
  return parse_config(in);
}

void write_config(std::ostream& out, const ExperimentConfig& c) {
  out << "[run]\nseed = " << c.seed << "\n\n";
  out << "[world]\nsource = " << c.world.source << '\n';
  if (!c.world.interactions.empty()) out << "interactions = " << c.world.interactions.string() << '\n';
  if (!c.world.images.empty()) out << "images = " << c.world.images.string() << '\n';
  const auto& s = c.world.synth;
  out << "seed = " << s.seed << "\nusers = " << s.num_users << "\nitems = " << s.num_items
      << "\ndensity = " << num(s.density) << "\npopularity_exponent = " << num(s.popularity_exponent)
      << "\ncategories = " << s.num_categories << "\ncategory_affinity = " << num(s.category_affinity)
      << "\nimage_side = " << s.image_side << "\nnegative_ratio = " << c.world.negative_ratio
      << "\ntargets = " << c.world.num_targets << "\n\n";
  out << "[extractor]\nseed = " << c.extractor_seed
      << "\noutput_scale = " << num(c.extractor.output_scale) << "\n\n";
  const auto& f = c.fed;
  out << "[federated]\nmodel = " << to_string(f.model) << "\nepochs = " << f.global_epochs
      << "\nlr = " << num(f.lr) << "\nlocal_epochs = " << f.local_epochs
      << "\nclient_fraction = " << num(f.client_fraction) << "\nthreads = " << f.threads
      << "\nscreen_initial_catalog = " << (f.screen_initial_catalog ? "on" : "off") << "\n\n";
  const auto& a = c.attack;
  out << "[attack]\nkind = " << to_string(a.kind) << "\nxi = " << num(a.xi)
      << "\nepsilon = " << num(a.epsilon) << "\nstart_epoch = " << f.attack_start_epoch
      << "\nsynthetic_positives = " << a.synthetic_positives << "\nfit_steps = " << a.fit_steps
      << "\nfit_lr = " << num(a.fit_lr) << "\ntop_k = " << a.top_k
      << "\npgd_iterations = " << a.pgd_iterations << "\npopularity_top_p = " << a.popularity_top_p
      << "\nprovider_id = " << a.provider_id << '\n';
  if (a.audit_dir) out << "audit = " << a.audit_dir->string() << '\n';
  out << '\n';
  const auto& d = c.defense;
  out << "[defense]\nenabled = " << (d.enabled ? "on" : "off") << "\nsteps = " << d.steps
      << "\nbeta1 = " << num(d.beta1) << "\nbeta_T = " << num(d.betaT) << "\nlambda = " << num(d.lambda)
      << "\nrho = " << (d.rho ? num(*d.rho) : std::string("calibrate"))
      << "\ncalibration_images = " << d.calibration_images << "\ntrain_steps = " << d.train_steps
      << "\ntrain_images = " << d.train_images << '\n';
  if (!d.denoiser.empty()) out << "denoiser = " << d.denoiser.string() << '\n';
  out << "\n[metrics]\ner_k = " << f.er_k << "\nndcg_k = " << f.ndcg_k << '\n';
}

}  // namespace vfr
