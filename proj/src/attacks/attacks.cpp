#include "vfr/attacks/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "vfr/errors.hpp"
#include "vfr/numcore/optim.hpp"
#include "vfr/rng.hpp"

namespace vfr {

std::string_view to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::None: return "none";
    case AttackKind::Psmu: return "psmu";
    case AttackKind::PsmuV: return "psmuv";
    case AttackKind::PsmuPlusPlus: return "psmu_pp";
    case AttackKind::Popularity: return "popularity";
  }
  return "?";
}

AttackKind parse_attack_kind(std::string_view name) {
  for (AttackKind k : {AttackKind::None, AttackKind::Psmu, AttackKind::PsmuV,
                       AttackKind::PsmuPlusPlus, AttackKind::Popularity}) {
    if (to_string(k) == name) return k;
  }
  throw InvalidConfig("unknown attack kind '" + std::string(name) + "'");
}

std::size_t cohort_size(double xi, std::size_t num_users) {
  if (!(xi >= 0.0 && xi <= 1.0)) throw InvalidConfig("xi must lie in [0, 1]");
  const auto n = static_cast<std::size_t>(std::llround(xi * static_cast<double>(num_users)));
  return std::max<std::size_t>(1, n);
}

TargetSet TargetSet::coldest(const Catalog& catalog, std::size_t count) {
  return TargetSet{select_cold_targets(catalog, count)};
}

bool TargetSet::contains(std::size_t item) const {
  return std::find(items.begin(), items.end(), item) != items.end();
}

ClientState SyntheticUser::as_client() const {
  ClientState c;
  c.user_id = member;
  c.embedding = embedding;
  c.data = data;
  return c;
}

// ---- synthetic users ------------------------------------------------------

SyntheticUser fit_synthetic_user(const PublicParams& snapshot, const Tensor* features,
                                 const TargetSet& targets, const AttackConfig& config,
                                 std::size_t epoch, std::size_t member) {
  const std::size_t n = snapshot.num_items();
  Rng rng(derive_seed(config.seed, "synthetic_user", epoch, member));
  std::vector<std::size_t> eligible;
  for (std::size_t j = 0; j < n; ++j) {
    if (!targets.contains(j)) eligible.push_back(j);
  }
  const std::size_t npos = std::min(config.synthetic_positives, eligible.size());
  if (npos == 0) throw EmptyLocalData("no items left for a synthetic user");
  SyntheticUser su;
  su.member = member;
  for (std::size_t k : rng.sample_without_replacement(eligible.size(), npos)) {
    su.positives.push_back(eligible[k]);
  }
  std::sort(su.positives.begin(), su.positives.end());

  std::vector<std::size_t> pool;
  for (std::size_t j : eligible) {
    if (!std::binary_search(su.positives.begin(), su.positives.end(), j)) pool.push_back(j);
  }
  std::vector<std::size_t> negatives;
  if (!pool.empty() && config.negative_ratio > 0) {
    if (pool.size() >= config.negative_ratio * npos) {
      for (std::size_t k : rng.sample_without_replacement(pool.size(), config.negative_ratio * npos)) {
        negatives.push_back(pool[k]);
      }
    } else {
      const std::size_t per = std::min(config.negative_ratio, pool.size());
      for (std::size_t p = 0; p < npos; ++p) {
        for (std::size_t k : rng.sample_without_replacement(pool.size(), per)) {
          negatives.push_back(pool[k]);
        }
      }
    }
  }
  std::size_t next = 0;
  const std::size_t per_pos = npos == 0 ? 0 : negatives.size() / npos;
  for (std::size_t j : su.positives) {
    su.data.push_back({member, j, 1});
    for (std::size_t k = 0; k < per_pos; ++k) su.data.push_back({member, negatives[next++], 0});
  }

  su.embedding = Tensor(Shape{kEmbeddingDim});
  for (auto& v : su.embedding.values()) v = rng.normal(0.0, 0.1);
  AdamState adam = AdamState::for_param(su.embedding, AdamConfig{.lr = config.fit_lr});
  ClientState client = su.as_client();
  for (std::size_t step = 0; step < config.fit_steps; ++step) {
    Graph g;
    BoundParams p = BoundParams::bind(g, snapshot, features, false);
    Var u = g.parameter(client.embedding);
    Gradients grads = backward(g, local_loss(p, u, client));
    adam_step(client.embedding, grads[u], adam);
  }
  su.embedding = client.embedding;
  return su;
}

std::vector<SyntheticUser> fit_cohort(const PublicParams& snapshot, const Tensor* features,
                                      const TargetSet& targets, const AttackConfig& config,
                                      std::size_t epoch, std::size_t count) {
  std::vector<SyntheticUser> out;
  for (std::size_t m = 0; m < count; ++m) {
    out.push_back(fit_synthetic_user(snapshot, features, targets, config, epoch, m));
  }
  return out;
}

// ---- attack loss ----------------------------------------------------------

Var attack_loss(const BoundParams& params, const std::vector<SyntheticUser>& users,
                const TargetSet& targets, std::size_t k, const Scorer& scorer,
                const std::optional<FeatureOverride>& override_feature) {
  if (k == 0) throw InvalidConfig("attack top-K must be at least 1");
  Graph& g = params.item_embeddings.graph();
  std::optional<Var> total;
  for (const SyntheticUser& su : users) {
    std::vector<std::size_t> live;
    for (std::size_t t : targets.items) {
      if (!std::binary_search(su.positives.begin(), su.positives.end(), t)) live.push_back(t);
    }
    if (live.empty()) continue;
    const auto scores = scorer.logits(su.embedding, su.positives);
    std::vector<std::size_t> candidates;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (!targets.contains(j) && !std::binary_search(su.positives.begin(), su.positives.end(), j)) {
        candidates.push_back(j);
      }
    }
    const auto top = top_k(scores, candidates, k);
    if (top.empty()) continue;
    std::vector<std::size_t> items = top;
    items.insert(items.end(), live.begin(), live.end());
    ScoreOutput out = score_items(params, g.constant(su.embedding), su.positives, items,
                                  override_feature);
    std::vector<std::size_t> head(top.size());
    for (std::size_t i = 0; i < top.size(); ++i) head[i] = i;
    Var pj = gather(out.probs, head);
    for (std::size_t ti = 0; ti < live.size(); ++ti) {
      Var pt = gather(out.probs, std::vector<std::size_t>(top.size(), top.size() + ti));
      Var term = sum(sigmoid(sub(pj, pt)));
      total = total ? add(*total, term) : term;
    }
  }
  return total ? *total : g.constant(Tensor::scalar(0.0));
}

double attack_loss_value(const PublicParams& params, const Tensor* features,
                         const std::vector<SyntheticUser>& users, const TargetSet& targets,
                         std::size_t k) {
  Graph g;
  BoundParams p = BoundParams::bind(g, params, features, false);
  const Scorer scorer(params, features);
  return attack_loss(p, users, targets, k, scorer).value().item();
}

std::vector<GradientUpload> psmu_round(const std::vector<SyntheticUser>& cohort,
                                       const PublicParams& snapshot, const Tensor* features,
                                       const TargetSet& targets, const AttackConfig& config,
                                       std::size_t first_client_id, std::size_t epoch) {
  const Scorer scorer(snapshot, features);
  std::vector<GradientUpload> uploads;
  for (std::size_t m = 0; m < cohort.size(); ++m) {
    Graph g;
    BoundParams p = BoundParams::bind(g, snapshot, features, true);
    Var loss = attack_loss(p, {cohort[m]}, targets, config.top_k, scorer);
    Gradients grads = backward(g, loss);
    uploads.push_back(p.collect(grads, targets.items, first_client_id + m, epoch));
  }
  return uploads;
}

// ---- image attacks --------------------------------------------------------

namespace {

struct LossAndGrad {
  double loss = 0.0;
  Tensor grad;
};

// Sign-gradient PGD shared by the image attacks. `objective` builds the loss
// for an image node on a fresh graph.
template <class Objective>
PgdResult projected_descent(const ImageAsset& original, const AttackConfig& config,
                            Objective objective) {
  auto evaluate = [&](const Tensor& x, bool want_grad) {
    Graph g;
    Var xv = want_grad ? g.parameter(x) : g.constant(x);
    Var loss = objective(g, xv);
    LossAndGrad r;
    r.loss = loss.value().item();
    if (want_grad) r.grad = backward(g, loss)[xv];
    return r;
  };
  const Tensor x0 = original.normalized();
  const double radius = config.epsilon / 127.5;
  const double step = radius / 4.0;

  PgdResult result;
  result.image = original;
  result.initial_loss = evaluate(x0, false).loss;
  result.final_loss = result.initial_loss;
  if (radius <= 0.0) return result;

  Tensor delta = Tensor::zeros_like(x0);
  for (std::size_t it = 0; it < config.pgd_iterations; ++it) {
    Tensor x = x0;
    x += delta;
    const LossAndGrad lg = evaluate(x, true);
    for (std::size_t i = 0; i < delta.size(); ++i) {
      const double g = lg.grad[i];
      const double s = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
      double d = std::clamp(delta[i] - step * s, -radius, radius);
      delta[i] = std::clamp(x0[i] + d, -1.0, 1.0) - x0[i];
    }
    Tensor candidate = x0;
    candidate += delta;
    ImageAsset img = original;
    img.pixels = ImageAsset::quantize(candidate);
    const double l = evaluate(img.normalized(), false).loss;
    if (l < result.final_loss) {
      result.final_loss = l;
      result.image = std::move(img);
    }
  }
  return result;
}

void check_owner(const ProviderState& provider, const TargetSet& targets) {
  for (std::size_t t : targets.items) {
    if (!provider.owns(t)) {
      throw NotTargetOwner("provider " + std::to_string(provider.provider_id) +
                           " does not own item " + std::to_string(t));
    }
  }
}

ImageAsset mark_adversarial(ImageAsset img, const ProviderState& provider, std::size_t epoch) {
  img.provider_id = provider.provider_id;
  img.uploaded_epoch = epoch;
  img.ground_truth_adversarial = true;
  return img;
}

}  // namespace

PgdResult psmuv_perturb(const ImageAsset& original, const Extractor& extractor,
                        const PublicParams& snapshot, const Tensor& features,
                        const std::vector<SyntheticUser>& users, const TargetSet& targets,
                        const AttackConfig& config) {
  const Scorer scorer(snapshot, &features);
  return projected_descent(original, config, [&](Graph& g, Var image) {
    BoundParams p = BoundParams::bind(g, snapshot, &features, false);
    FeatureOverride ov{original.item_id, extractor.extract(g, image)};
    return attack_loss(p, users, targets, config.top_k, scorer, ov);
  });
}

std::vector<ImageAsset> psmuv_round(const ProviderState& provider, const Extractor& extractor,
                                    const PublicParams& snapshot, const Tensor& features,
                                    const TargetSet& targets, const AttackConfig& config,
                                    std::size_t epoch, std::size_t cohort,
                                    const std::vector<SyntheticUser>* shared_users) {
  check_owner(provider, targets);
  std::vector<SyntheticUser> own;
  if (shared_users == nullptr) {
    own = fit_cohort(snapshot, &features, targets, config, epoch, cohort);
    shared_users = &own;
  }
  std::vector<ImageAsset> out;
  for (std::size_t t : targets.items) {
    PgdResult r = psmuv_perturb(provider.originals.at(t), extractor, snapshot, features,
                                *shared_users, TargetSet{{t}}, config);
    out.push_back(mark_adversarial(std::move(r.image), provider, epoch));
  }
  return out;
}

PlusPlusRound psmu_plus_plus_round(const ProviderState& provider, const Extractor& extractor,
                                   const PublicParams& snapshot, const Tensor& features,
                                   const TargetSet& targets, const AttackConfig& config,
                                   std::size_t first_client_id, std::size_t epoch,
                                   std::size_t cohort, bool image_leg) {
  PlusPlusRound r;
  r.users = fit_cohort(snapshot, &features, targets, config, epoch, cohort);
  r.uploads = psmu_round(r.users, snapshot, &features, targets, config, first_client_id, epoch);
  if (image_leg) {
    r.images = psmuv_round(provider, extractor, snapshot, features, targets, config, epoch,
                           cohort, &r.users);
  }
  return r;
}

std::vector<ImageAsset> popularity_attack_round(const ProviderState& provider,
                                                const Extractor& extractor,
                                                const std::vector<ImageAsset>& registry,
                                                const Catalog& catalog, const TargetSet& targets,
                                                const AttackConfig& config, std::size_t epoch) {
  check_owner(provider, targets);
  std::vector<std::size_t> order;
  for (std::size_t j = 0; j < catalog.num_items; ++j) {
    if (!targets.contains(j)) order.push_back(j);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return catalog.popularity[a] > catalog.popularity[b];
  });
  order.resize(std::min(config.popularity_top_p, order.size()));
  if (order.empty()) return {};

  Tensor centre(Shape{extractor.output_dim()});
  for (std::size_t j : order) centre += extractor.extract(registry.at(j).normalized());
  centre *= 1.0 / static_cast<double>(order.size());

  std::vector<ImageAsset> out;
  for (std::size_t t : targets.items) {
    PgdResult r = projected_descent(provider.originals.at(t), config, [&](Graph& g, Var image) {
      return sum(square(sub(extractor.extract(g, image), g.constant(centre))));
    });
    out.push_back(mark_adversarial(std::move(r.image), provider, epoch));
  }
  return out;
}

// ---- audit and the adversary ---------------------------------------------

double linf_distance(const ImageAsset& a, const ImageAsset& b) {
  if (a.height != b.height || a.width != b.width || a.pixels.size() != b.pixels.size()) {
    throw DimensionMismatch("images differ in size");
  }
  int worst = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    worst = std::max(worst, std::abs(int{a.pixels[i]} - int{b.pixels[i]}));
  }
  return worst;
}

ProviderState provider_for(const World& world, std::size_t provider_id) {
  ProviderState p;
  p.provider_id = provider_id;
  for (std::size_t t : world.targets) p.originals.emplace(t, world.images.at(t));
  return p;
}

Attacker::Attacker(AttackConfig config, ProviderState provider, std::size_t num_users)
    : config_(std::move(config)),
      provider_(std::move(provider)),
      num_users_(num_users),
      cohort_(cohort_size(config_.xi, num_users)) {
  if (config_.epsilon < 0.0) throw InvalidConfig("epsilon must be non-negative");
  if (config_.audit_dir) {
    std::filesystem::create_directories(*config_.audit_dir);
    std::ofstream(*config_.audit_dir / "manifest.txt", std::ios::trunc);
  }
}

std::string Attacker::name() const { return std::string(to_string(config_.kind)); }

const std::vector<SyntheticUser>& Attacker::users_for(const RoundContext& ctx) {
  if (users_epoch_ != ctx.epoch) {
    users_ = fit_cohort(ctx.snapshot, &ctx.features, TargetSet{ctx.targets}, config_, ctx.epoch,
                        cohort_);
    users_epoch_ = ctx.epoch;
  }
  return users_;
}

void Attacker::record(const ImageAsset& img, std::size_t epoch) {
  AuditEntry e;
  e.item_id = img.item_id;
  e.epoch = epoch;
  e.linf = linf_distance(img, provider_.originals.at(img.item_id));
  e.within_budget = e.linf <= config_.epsilon && img.pixels.size() == img.num_values();
  audit_.push_back(e);
  if (config_.audit_dir) {
    const auto stem = "item" + std::to_string(e.item_id) + "_epoch" + std::to_string(epoch);
    save_ppm(img, *config_.audit_dir / (stem + ".ppm"));
    std::ofstream(*config_.audit_dir / "manifest.txt", std::ios::app)
        << e.item_id << ' ' << e.epoch << ' ' << e.linf << '\n';
  }
}

std::size_t Attacker::violations() const {
  return static_cast<std::size_t>(
      std::count_if(audit_.begin(), audit_.end(), [](const AuditEntry& e) { return !e.within_budget; }));
}

std::vector<ImageAsset> Attacker::image_uploads(const RoundContext& ctx) {
  const TargetSet targets{ctx.targets};
  std::vector<ImageAsset> out;
  switch (config_.kind) {
    case AttackKind::PsmuV:
    case AttackKind::PsmuPlusPlus:
      out = psmuv_round(provider_, ctx.extractor, ctx.snapshot, ctx.features, targets, config_,
                        ctx.epoch, cohort_, &users_for(ctx));
      break;
    case AttackKind::Popularity:
      out = popularity_attack_round(provider_, ctx.extractor, ctx.registry, ctx.catalog, targets,
                                    config_, ctx.epoch);
      break;
    default:
      break;
  }
  for (const auto& img : out) record(img, ctx.epoch);
  return out;
}

std::vector<GradientUpload> Attacker::model_uploads(const RoundContext& ctx) {
  if (config_.kind != AttackKind::Psmu && config_.kind != AttackKind::PsmuPlusPlus) return {};
  return psmu_round(users_for(ctx), ctx.snapshot, &ctx.features, TargetSet{ctx.targets}, config_,
                    num_users_, ctx.epoch);
}

}  // namespace vfr
