#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vfr/dataio/image.hpp"
#include "vfr/dataio/interactions.hpp"
#include "vfr/fedsim/simulation.hpp"
#include "vfr/recmodels/model.hpp"
#include "vfr/vision/extractor.hpp"

namespace vfr {

enum class AttackKind { None, Psmu, PsmuV, PsmuPlusPlus, Popularity };

std::string_view to_string(AttackKind kind);
AttackKind parse_attack_kind(std::string_view name);

struct AttackConfig {
  AttackKind kind = AttackKind::None;
  double xi = 0.001;  // malicious share of the user count
  std::size_t synthetic_positives = 30;
  std::size_t negative_ratio = 4;
  std::size_t fit_steps = 20;
  double fit_lr = 0.01;
  std::size_t top_k = 5;
  double epsilon = 4.0;  // L-infinity bound on the 0..255 scale
  std::size_t pgd_iterations = 10;
  std::size_t popularity_top_p = 10;
  std::uint64_t seed = 1;
  std::size_t provider_id = 9999;
  std::optional<std::filesystem::path> audit_dir;
};

// max(1, round(xi * num_users)).
std::size_t cohort_size(double xi, std::size_t num_users);

struct TargetSet {
  std::vector<std::size_t> items;
  static TargetSet coldest(const Catalog& catalog, std::size_t count = 1);
  bool contains(std::size_t item) const;
};

struct SyntheticUser {
  std::size_t member = 0;
  Tensor embedding;
  std::vector<std::size_t> positives;  // ascending
  std::vector<InteractionRecord> data;

  ClientState as_client() const;
};

// Draws a fresh positive set (never a target) with 1:ratio negatives and fits
// the embedding by Adam on the recommendation loss with public parameters held
// fixed.
SyntheticUser fit_synthetic_user(const PublicParams& snapshot, const Tensor* features,
                                 const TargetSet& targets, const AttackConfig& config,
                                 std::size_t epoch, std::size_t member);

std::vector<SyntheticUser> fit_cohort(const PublicParams& snapshot, const Tensor* features,
                                      const TargetSet& targets, const AttackConfig& config,
                                      std::size_t epoch, std::size_t count);

// Sum over users, over targets outside the user's positives, over the user's
// top-K non-target non-interacted items j, of sigmoid(r_hat_j - r_hat_t).
// The top-K lists are taken from the current (value-level) scores.
Var attack_loss(const BoundParams& params, const std::vector<SyntheticUser>& users,
                const TargetSet& targets, std::size_t k, const Scorer& scorer,
                const std::optional<FeatureOverride>& override_feature = std::nullopt);
double attack_loss_value(const PublicParams& params, const Tensor* features,
                         const std::vector<SyntheticUser>& users, const TargetSet& targets,
                         std::size_t k);

// One poisoned upload per synthetic user; item-embedding rows outside the
// targets are dropped, every other public gradient is kept whole.
std::vector<GradientUpload> psmu_round(const std::vector<SyntheticUser>& cohort,
                                       const PublicParams& snapshot, const Tensor* features,
                                       const TargetSet& targets, const AttackConfig& config,
                                       std::size_t first_client_id, std::size_t epoch);

// The image provider: owns the pristine images of its items.
struct ProviderState {
  std::size_t provider_id = 0;
  std::map<std::size_t, ImageAsset> originals;

  bool owns(std::size_t item) const { return originals.count(item) != 0; }
};

// Projected sign-gradient descent inside the L-infinity ball of radius
// epsilon (0..255 scale) around the original, clipped to valid pixels.
// Returns the best quantized iterate seen, starting with the original.
struct PgdResult {
  ImageAsset image;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

PgdResult psmuv_perturb(const ImageAsset& original, const Extractor& extractor,
                        const PublicParams& snapshot, const Tensor& features,
                        const std::vector<SyntheticUser>& users, const TargetSet& targets,
                        const AttackConfig& config);

// Adversarial images for every target; δ is recomputed from the original
// each call. `shared_users` are reused without refitting when given.
std::vector<ImageAsset> psmuv_round(const ProviderState& provider, const Extractor& extractor,
                                    const PublicParams& snapshot, const Tensor& features,
                                    const TargetSet& targets, const AttackConfig& config,
                                    std::size_t epoch, std::size_t cohort,
                                    const std::vector<SyntheticUser>* shared_users = nullptr);

struct PlusPlusRound {
  std::vector<GradientUpload> uploads;
  std::vector<ImageAsset> images;
  std::vector<SyntheticUser> users;
};

PlusPlusRound psmu_plus_plus_round(const ProviderState& provider, const Extractor& extractor,
                                   const PublicParams& snapshot, const Tensor& features,
                                   const TargetSet& targets, const AttackConfig& config,
                                   std::size_t first_client_id, std::size_t epoch,
                                   std::size_t cohort, bool image_leg = true);

// Pulls each target's feature toward the mean feature of the top_p most
// popular items, under the same projection.
std::vector<ImageAsset> popularity_attack_round(const ProviderState& provider,
                                                const Extractor& extractor,
                                                const std::vector<ImageAsset>& registry,
                                                const Catalog& catalog, const TargetSet& targets,
                                                const AttackConfig& config, std::size_t epoch);

// ---- constraint audit ------------------------------------------------------

struct AuditEntry {
  std::size_t item_id = 0;
  std::size_t epoch = 0;
  double linf = 0.0;  // 0..255 scale
  bool within_budget = true;
};

double linf_distance(const ImageAsset& a, const ImageAsset& b);

// The harness-facing adversary: dispatches on AttackConfig::kind, checks every
// image it uploads against the budget and optionally writes audit PPMs plus a
// manifest of `item_id epoch linf_norm` lines.
class Attacker : public Adversary {
 public:
  Attacker(AttackConfig config, ProviderState provider, std::size_t num_users);

  std::string name() const override;
  std::vector<ImageAsset> image_uploads(const RoundContext& ctx) override;
  std::vector<GradientUpload> model_uploads(const RoundContext& ctx) override;

  const std::vector<AuditEntry>& audit() const { return audit_; }
  std::size_t violations() const;
  const std::vector<SyntheticUser>& last_users() const { return users_; }
  std::size_t cohort() const { return cohort_; }

 private:
  const std::vector<SyntheticUser>& users_for(const RoundContext& ctx);
  void record(const ImageAsset& img, std::size_t epoch);

  AttackConfig config_;
  ProviderState provider_;
  std::size_t num_users_;
  std::size_t cohort_;
  std::vector<SyntheticUser> users_;
  std::size_t users_epoch_ = 0;
  std::vector<AuditEntry> audit_;
};

// Provider owning the targets' pristine images from a world.
ProviderState provider_for(const World& world, std::size_t provider_id);

}  // namespace vfr
