#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vfr/dataio/interactions.hpp"
#include "vfr/numcore/autodiff.hpp"
#include "vfr/numcore/tensor.hpp"

namespace vfr {

enum class ModelKind { Ncf, Vncf, LightGcn, LightVgcn };

std::string_view to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);
constexpr bool uses_visual(ModelKind k) { return k == ModelKind::Vncf || k == ModelKind::LightVgcn; }
constexpr bool uses_graph(ModelKind k) { return k == ModelKind::LightGcn || k == ModelKind::LightVgcn; }

inline constexpr std::size_t kEmbeddingDim = 32;

// Server-held parameters. Layer widths: input 96 (user, item, visual slots)
// or 64 without the visual slot, then 32, then 16 into the head.
struct PublicParams {
  ModelKind kind = ModelKind::Ncf;
  Tensor item_embeddings;   // V  [num_items x 32]
  Tensor visual_transform;  // E  [32 x feature_dim]; empty for non-visual kinds
  std::vector<Tensor> weights;  // [in x out] per FFN layer
  std::vector<Tensor> biases;
  Tensor head;  // h [16]

  static PublicParams init(ModelKind kind, std::size_t num_items, std::size_t feature_dim,
                           std::uint64_t seed);

  std::size_t num_items() const { return item_embeddings.dim(0); }
  std::size_t feature_dim() const { return visual_transform.empty() ? 0 : visual_transform.dim(1); }
  std::vector<std::size_t> layer_widths() const;

  // Every tensor in a fixed order: V, [E], W1, b1, W2, b2, h.
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
  std::vector<std::string> tensor_names() const;

  bool all_finite() const;
  friend bool operator==(const PublicParams&, const PublicParams&) = default;
};

// Public-parameter gradients sent by one client in one round. Item-embedding
// gradients are sparse: only listed rows are nonzero.
struct GradientUpload {
  std::size_t client_id = 0;
  std::size_t epoch = 0;
  std::map<std::size_t, Tensor> item_rows;
  Tensor visual_transform;
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
  Tensor head;

  static GradientUpload zeros(const PublicParams& shape_of, std::size_t client_id,
                              std::size_t epoch);
  // Accumulate another upload's values (client/epoch unchanged).
  void accumulate(const GradientUpload& other);
  bool all_finite() const;
};

// One user's private side: embedding and local data never leave the client.
struct ClientState {
  std::size_t user_id = 0;
  Tensor embedding;  // u [32]
  std::vector<InteractionRecord> data;

  // Local bipartite graph neighbours (positive items), ascending.
  std::vector<std::size_t> neighbors() const;
  std::vector<bool> interacted_mask(std::size_t num_items) const;

  static ClientState init(std::size_t user_id, std::vector<InteractionRecord> data,
                          std::uint64_t seed);
};

// Public parameters placed on a graph, as parameters or constants.
struct BoundParams {
  ModelKind kind;
  Var item_embeddings;
  Var visual_transform;  // invalid for non-visual kinds
  std::vector<Var> weights;
  std::vector<Var> biases;
  Var head;
  Var features;  // [num_items x feature_dim] extractor outputs, visual kinds only

  static BoundParams bind(Graph& graph, const PublicParams& params, const Tensor* features,
                          bool trainable);
  // Gradients of every bound tensor, as an upload (V rows restricted to `rows`).
  GradientUpload collect(const Gradients& grads, const std::vector<std::size_t>& rows,
                         std::size_t client_id, std::size_t epoch) const;
};

// Optional replacement for one item's extractor output (image attacks
// differentiate through it).
struct FeatureOverride {
  std::size_t item = 0;
  Var feature;  // [feature_dim]
};

// Per-user forward pass over a list of items.
struct ScoreOutput {
  Var logits;  // [n]
  Var probs;   // [n]
};

// Predicted preferences of `user` (an embedding Var) for `items`. For the
// graph kinds, `neighbors` is the user's local graph; propagation runs one
// layer and sums layers 0 and 1.
ScoreOutput score_items(const BoundParams& p, Var user, const std::vector<std::size_t>& neighbors,
                        const std::vector<std::size_t>& items,
                        const std::optional<FeatureOverride>& override_feature = std::nullopt);

// Final user embedding and final item embeddings (rows of `items`) after
// local propagation; identity for non-graph kinds.
struct Propagated {
  Var user;   // [32]
  Var items;  // [n x 32]
};
Propagated propagate(const BoundParams& p, Var user, const std::vector<std::size_t>& neighbors,
                     const std::vector<std::size_t>& items,
                     const std::optional<FeatureOverride>& override_feature = std::nullopt);

// Value-only scoring against one public snapshot. The item half of the first
// layer is precomputed once, so ranking a user over the whole catalog costs
// one small matrix product per item. Used by evaluation and by attackers to
// find top-K lists; agrees with score_items up to rounding.
class Scorer {
 public:
  Scorer(const PublicParams& params, const Tensor* features);

  // Logits of every item for a user with layer-0 embedding `user` and local
  // graph `neighbors` (ignored for non-graph kinds).
  std::vector<double> logits(const Tensor& user, const std::vector<std::size_t>& neighbors) const;
  // Layer-summed user embedding (identity for non-graph kinds).
  Tensor final_user(const Tensor& user, const std::vector<std::size_t>& neighbors) const;

 private:
  double logit_from(const double* item_part, const double* user_part) const;

  const PublicParams* params_;
  const Tensor* features_;
  Tensor item_part_;  // [num_items x 32]: first-layer pre-activation minus user slot
};

// r_hat for one (user, item) pair on the NCF kinds. `feature` is the item's
// extractor output (ignored by plain NCF).
double vncf_forward(const Tensor& user, std::size_t item, const PublicParams& params,
                    const Tensor* feature);

// One-layer local propagation; returns the final user embedding and final
// embeddings of the user's neighbour items, in ascending item order.
struct PropagatedValues {
  Tensor user;
  std::map<std::size_t, Tensor> items;
};
PropagatedValues lightvgcn_propagate(const ClientState& client, const PublicParams& params,
                                     const Tensor* features);

// BCE over the client's data at the given public parameters.
Var local_loss(const BoundParams& p, Var user, const ClientState& client);
double local_loss_value(const PublicParams& params, const Tensor* features,
                        const ClientState& client);

struct LocalTrainResult {
  Tensor embedding;
  GradientUpload upload;
};

// `local_epochs` passes of gradient descent on the private embedding against
// a fixed public snapshot; the upload is the sum of per-pass public gradients.
LocalTrainResult local_train(const ClientState& client, const PublicParams& snapshot,
                             const Tensor* features, std::size_t local_epochs, double lr,
                             std::size_t epoch);

// Top-k of `scores` over `candidates`, descending; ties by ascending item id.
std::vector<std::size_t> top_k(const std::vector<double>& scores_by_item,
                               const std::vector<std::size_t>& candidates, std::size_t k);

}  // namespace vfr
