#include <doctest.h>

#include <cmath>

#include "vfr/attacks/attacks.hpp"
#include "vfr/errors.hpp"

using namespace vfr;

namespace {

struct Fixture {
  World world;
  Extractor extractor{7};
  PublicParams params;
  Tensor features;
  TargetSet targets;

  explicit Fixture(ModelKind kind) {
    SynthParams p;
    p.num_users = 30;
    p.num_items = 60;
    p.density = 0.1;
    world = make_world(p);
    params = PublicParams::init(kind, world.catalog.num_items, extractor.output_dim(), 3);
    features = Tensor(Shape{world.catalog.num_items, extractor.output_dim()});
    for (std::size_t j = 0; j < world.catalog.num_items; ++j) {
      const Tensor f = extractor.extract(world.images[j].normalized());
      std::copy(f.values().begin(), f.values().end(), features.row(j).begin());
    }
    targets.items = world.targets;
  }
};

AttackConfig small_attack(AttackKind kind) {
  AttackConfig c;
  c.kind = kind;
  c.synthetic_positives = 6;
  c.fit_steps = 5;
  c.pgd_iterations = 4;
  return c;
}

}  // namespace

TEST_CASE("cohort size") {
  CHECK(cohort_size(0.001, 200) == 1);
  CHECK(cohort_size(0.001, 6040) == 6);
  CHECK(cohort_size(0.05, 200) == 10);
  CHECK(cohort_size(0.0, 200) == 1);
}

TEST_CASE("attack kind names") {
  for (AttackKind k : {AttackKind::None, AttackKind::Psmu, AttackKind::PsmuV, AttackKind::PsmuPlusPlus,
                       AttackKind::Popularity}) {
    CHECK(parse_attack_kind(to_string(k)) == k);
  }
  CHECK_THROWS_AS(parse_attack_kind("flood"), InvalidConfig);
}

TEST_CASE("cold targets") {
  Catalog cat{1, 4, {5, 0, 2, 0}};
  const TargetSet t = TargetSet::coldest(cat, 2);
  CHECK(t.items == std::vector<std::size_t>{1, 3});
  CHECK(t.contains(3));
  CHECK_FALSE(t.contains(0));
}

TEST_CASE("synthetic users avoid targets and are reproducible") {
  Fixture fx(ModelKind::Ncf);
  const AttackConfig c = small_attack(AttackKind::Psmu);
  const auto a = fit_synthetic_user(fx.params, nullptr, fx.targets, c, 9, 0);
  const auto b = fit_synthetic_user(fx.params, nullptr, fx.targets, c, 9, 0);
  CHECK(a.embedding == b.embedding);
  CHECK(a.positives.size() == 6);
  CHECK(a.data.size() == 30);
  for (auto j : a.positives) CHECK_FALSE(fx.targets.contains(j));
  CHECK(fit_synthetic_user(fx.params, nullptr, fx.targets, c, 10, 0).positives != a.positives);
  CHECK(fit_cohort(fx.params, nullptr, fx.targets, c, 9, 3).size() == 3);
}

TEST_CASE("model poisoning touches only target rows") {
  for (ModelKind kind : {ModelKind::Ncf, ModelKind::LightVgcn}) {
    Fixture fx(kind);
    const AttackConfig c = small_attack(AttackKind::Psmu);
    const Tensor* f = uses_visual(kind) ? &fx.features : nullptr;
    const auto users = fit_cohort(fx.params, f, fx.targets, c, 9, 3);
    const auto uploads = psmu_round(users, fx.params, f, fx.targets, c, 100, 9);
    REQUIRE(uploads.size() == 3);
    for (std::size_t i = 0; i < uploads.size(); ++i) {
      CHECK(uploads[i].client_id == 100 + i);
      CHECK(uploads[i].epoch == 9);
      REQUIRE(uploads[i].item_rows.size() == 1);
      CHECK(uploads[i].item_rows.begin()->first == fx.targets.items[0]);
      CHECK(uploads[i].all_finite());
    }
    // Descending the uploaded gradient lowers the attack loss.
    PublicParams stepped = fx.params;
    aggregate(stepped, uploads, 0.01, 9);
    CHECK(attack_loss_value(stepped, f, users, fx.targets, 5) <
          attack_loss_value(fx.params, f, users, fx.targets, 5));
  }
}

TEST_CASE("image perturbation respects the budget") {
  Fixture fx(ModelKind::Vncf);
  AttackConfig c = small_attack(AttackKind::PsmuV);
  const auto users = fit_cohort(fx.params, &fx.features, fx.targets, c, 9, 2);
  const ImageAsset& original = fx.world.images[fx.targets.items[0]];

  c.epsilon = 0.0;
  CHECK(psmuv_perturb(original, fx.extractor, fx.params, fx.features, users, fx.targets, c).image.pixels ==
        original.pixels);

  for (double eps : {4.0, 16.0}) {
    c.epsilon = eps;
    const PgdResult r = psmuv_perturb(original, fx.extractor, fx.params, fx.features, users, fx.targets, c);
    CHECK(linf_distance(r.image, original) <= eps);
    CHECK(r.final_loss <= r.initial_loss);
    CHECK(r.image.item_id == original.item_id);
  }
  ImageAsset other = original;
  other.width = 8;
  CHECK_THROWS_AS(linf_distance(original, other), DimensionMismatch);
}

TEST_CASE("PSMU++ shares its users between legs and reduces to PSMU without images") {
  Fixture fx(ModelKind::Vncf);
  const AttackConfig c = small_attack(AttackKind::PsmuPlusPlus);
  const ProviderState provider = provider_for(fx.world, 9999);
  CHECK(provider.owns(fx.targets.items[0]));
  const PlusPlusRound both =
      psmu_plus_plus_round(provider, fx.extractor, fx.params, fx.features, fx.targets, c, 200, 9, 2);
  CHECK(both.users.size() == 2);
  CHECK(both.uploads.size() == 2);
  CHECK(both.images.size() == fx.targets.items.size());
  for (const auto& img : both.images) CHECK(linf_distance(img, provider.originals.at(img.item_id)) <= 4.0);

  const auto alone = psmuv_round(provider, fx.extractor, fx.params, fx.features, fx.targets, c, 9, 2,
                                 &both.users);
  CHECK(alone.front().pixels == both.images.front().pixels);

  const PlusPlusRound model_only = psmu_plus_plus_round(provider, fx.extractor, fx.params, fx.features,
                                                        fx.targets, c, 200, 9, 2, false);
  CHECK(model_only.images.empty());
  const auto psmu = psmu_round(model_only.users, fx.params, &fx.features, fx.targets, c, 200, 9);
  for (std::size_t i = 0; i < psmu.size(); ++i) {
    CHECK(psmu[i].item_rows == model_only.uploads[i].item_rows);
    CHECK(psmu[i].head == model_only.uploads[i].head);
  }
}

TEST_CASE("popularity baseline moves features toward the popular mean") {
  Fixture fx(ModelKind::Vncf);
  const AttackConfig c = small_attack(AttackKind::Popularity);
  const ProviderState provider = provider_for(fx.world, 9999);
  const auto imgs = popularity_attack_round(provider, fx.extractor, fx.world.images, fx.world.catalog,
                                            fx.targets, c, 9);
  REQUIRE(imgs.size() == 1);
  CHECK(linf_distance(imgs[0], provider.originals.at(imgs[0].item_id)) <= 4.0);
}

TEST_CASE("attacker audit and dispatch") {
  Fixture fx(ModelKind::Vncf);
  AttackConfig c = small_attack(AttackKind::PsmuPlusPlus);
  c.xi = 0.1;
  Attacker atk(c, provider_for(fx.world, 9999), fx.world.catalog.num_users);
  CHECK(atk.cohort() == 3);
  const RoundContext ctx{9, fx.params, fx.features, fx.world.images, fx.world.catalog, fx.targets.items,
                         fx.extractor};
  const auto imgs = atk.image_uploads(ctx);
  const auto ups = atk.model_uploads(ctx);
  CHECK(imgs.size() == 1);
  CHECK(ups.size() == 3);
  CHECK(atk.audit().size() == 1);
  CHECK(atk.violations() == 0);
  CHECK(atk.audit()[0].within_budget);
  CHECK(atk.audit()[0].linf <= 4.0);

  AttackConfig none = c;
  none.kind = AttackKind::None;
  Attacker idle(none, provider_for(fx.world, 9999), fx.world.catalog.num_users);
  CHECK(idle.image_uploads(ctx).empty());
  CHECK(idle.model_uploads(ctx).empty());

  AttackConfig model_only = c;
  model_only.kind = AttackKind::Psmu;
  Attacker m(model_only, provider_for(fx.world, 9999), fx.world.catalog.num_users);
  CHECK(m.image_uploads(ctx).empty());
  CHECK(m.model_uploads(ctx).size() == 3);
}
