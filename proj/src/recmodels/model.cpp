#include "vfr/recmodels/model.hpp"


#include <algorithm>
#include <cmath>
#include <set>

#include "vfr/errors.hpp"
#include "vfr/numcore/optim.hpp"
#include "vfr/rng.hpp"

namespace vfr {

namespace {

constexpr std::size_t kHidden = 32;
constexpr std::size_t kHeadWidth = 16;
constexpr double kEmbeddingInitSd = 0.1;

Tensor normal_tensor(Rng& rng, Shape shape, double sd) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.normal(0.0, sd);
  return t;
}

Tensor row_copy(const Tensor& m, std::size_t r) {
  auto span = m.row(r);
  return Tensor::vector(std::vector<double>(span.begin(), span.end()));
}

}  // namespace

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::Ncf: return "ncf";
    case ModelKind::Vncf: return "vncf";
    case ModelKind::LightGcn: return "lightgcn";
    case ModelKind::LightVgcn: return "lightvgcn";
  }
  return "?";
}

ModelKind parse_model_kind(std::string_view name) {
  for (ModelKind k : {ModelKind::Ncf, ModelKind::Vncf, ModelKind::LightGcn, ModelKind::LightVgcn}) {
    if (to_string(k) == name) return k;
  }
  throw InvalidConfig("unknown model kind '" + std::string(name) + "'");
}

// ---- PublicParams ---------------------------------------------------------

PublicParams PublicParams::init(ModelKind kind, std::size_t num_items, std::size_t feature_dim,
                                std::uint64_t seed) {
  if (num_items == 0) throw EmptyDataset("model needs at least one item");
  Rng rng(derive_seed(seed, "public_init"));
  PublicParams p;
  p.kind = kind;
  p.item_embeddings = normal_tensor(rng, {num_items, kEmbeddingDim}, kEmbeddingInitSd);
  if (uses_visual(kind)) {
    if (feature_dim == 0) throw DimensionMismatch("visual model needs a feature dimension");
    p.visual_transform = normal_tensor(rng, {kEmbeddingDim, feature_dim},
                                       1.0 / std::sqrt(static_cast<double>(feature_dim)));
  }
  const std::size_t in = uses_visual(kind) ? 3 * kEmbeddingDim : 2 * kEmbeddingDim;
  const std::size_t widths[] = {in, kHidden, kHeadWidth};
  for (std::size_t l = 0; l + 1 < std::size(widths); ++l) {
    p.weights.push_back(normal_tensor(rng, {widths[l], widths[l + 1]},
                                      std::sqrt(2.0 / static_cast<double>(widths[l]))));
    p.biases.emplace_back(Shape{widths[l + 1]});
  }
  p.head = normal_tensor(rng, {kHeadWidth}, 1.0 / std::sqrt(static_cast<double>(kHeadWidth)));
  return p;
}

std::vector<std::size_t> PublicParams::layer_widths() const {
  std::vector<std::size_t> w;
  for (const Tensor& t : weights) w.push_back(t.dim(0));
  w.push_back(head.size());
  return w;
}

std::vector<Tensor*> PublicParams::tensors() {
  std::vector<Tensor*> out{&item_embeddings};
  if (!visual_transform.empty()) out.push_back(&visual_transform);
  for (std::size_t l = 0; l < weights.size(); ++l) {
    out.push_back(&weights[l]);
    out.push_back(&biases[l]);
  }
  out.push_back(&head);
  return out;
}

std::vector<const Tensor*> PublicParams::tensors() const {
  auto mut = const_cast<PublicParams*>(this)->tensors();
  return {mut.begin(), mut.end()};
}

std::vector<std::string> PublicParams::tensor_names() const {
  std::vector<std::string> out{"V"};
  if (!visual_transform.empty()) out.push_back("E");
  for (std::size_t l = 0; l < weights.size(); ++l) {
    out.push_back("W" + std::to_string(l + 1));
    out.push_back("b" + std::to_string(l + 1));
  }
  out.push_back("h");
  return out;
}

bool PublicParams::all_finite() const {
  for (const Tensor* t : tensors()) {
    if (!t->all_finite()) return false;
  }
  return true;
}

// ---- GradientUpload -------------------------------------------------------

GradientUpload GradientUpload::zeros(const PublicParams& shape_of, std::size_t client_id,
                                     std::size_t epoch) {
  GradientUpload u;
  u.client_id = client_id;
  u.epoch = epoch;
  if (!shape_of.visual_transform.empty()) {
    u.visual_transform = Tensor::zeros_like(shape_of.visual_transform);
  }
  for (const Tensor& w : shape_of.weights) u.weights.push_back(Tensor::zeros_like(w));
  for (const Tensor& b : shape_of.biases) u.biases.push_back(Tensor::zeros_like(b));
  u.head = Tensor::zeros_like(shape_of.head);
  return u;
}

void GradientUpload::accumulate(const GradientUpload& other) {
  for (const auto& [row, g] : other.item_rows) {
    auto [it, inserted] = item_rows.try_emplace(row, g);
    if (!inserted) it->second += g;
  }
  if (!other.visual_transform.empty()) {
    if (visual_transform.empty()) {
      visual_transform = other.visual_transform;
    } else {
      visual_transform += other.visual_transform;
    }
  }
  if (weights.size() != other.weights.size() || biases.size() != other.biases.size()) {
    throw ShapeMismatch("uploads describe different model shapes");
  }
  for (std::size_t l = 0; l < weights.size(); ++l) {
    weights[l] += other.weights[l];
    biases[l] += other.biases[l];
  }
  head += other.head;
}

bool GradientUpload::all_finite() const {
  for (const auto& [row, g] : item_rows) {
    if (!g.all_finite()) return false;
  }
  if (!visual_transform.all_finite() || !head.all_finite()) return false;
  for (const Tensor& t : weights) {
    if (!t.all_finite()) return false;
  }
  for (const Tensor& t : biases) {
    if (!t.all_finite()) return false;
  }
  return true;
}

// ---- ClientState ----------------------------------------------------------

std::vector<std::size_t> ClientState::neighbors() const {
  std::vector<std::size_t> out;
  for (const auto& r : data) {
    if (r.rating == 1) out.push_back(r.item);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<bool> ClientState::interacted_mask(std::size_t num_items) const {
  std::vector<bool> mask(num_items, false);
  for (const auto& r : data) {
    if (r.rating == 1 && r.item < num_items) mask[r.item] = true;
  }
  return mask;
}

ClientState ClientState::init(std::size_t user_id, std::vector<InteractionRecord> data,
                              std::uint64_t seed) {
  Rng rng(derive_seed(seed, "user_init", 0, user_id));
  ClientState c;
  c.user_id = user_id;
  c.embedding = normal_tensor(rng, {kEmbeddingDim}, kEmbeddingInitSd);
  c.data = std::move(data);
  return c;
}

// ---- graph path -----------------------------------------------------------

BoundParams BoundParams::bind(Graph& graph, const PublicParams& params, const Tensor* features,
                              bool trainable) {
  auto put = [&](const Tensor& t) { return trainable ? graph.parameter(t) : graph.constant(t); };
  BoundParams b;
  b.kind = params.kind;
  b.item_embeddings = put(params.item_embeddings);
  if (uses_visual(params.kind)) {
    if (features == nullptr || features->rank() != 2 ||
        features->dim(0) != params.num_items() || features->dim(1) != params.feature_dim()) {
      throw DimensionMismatch("visual model needs a [num_items x feature_dim] feature table");
    }
    b.visual_transform = put(params.visual_transform);
    b.features = graph.constant(*features);
  }
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    b.weights.push_back(put(params.weights[l]));
    b.biases.push_back(put(params.biases[l]));
  }
  b.head = put(params.head);
  return b;
}

GradientUpload BoundParams::collect(const Gradients& grads, const std::vector<std::size_t>& rows,
                                    std::size_t client_id, std::size_t epoch) const {
  GradientUpload u;
  u.client_id = client_id;
  u.epoch = epoch;
  const Tensor& gv = grads[item_embeddings];
  for (std::size_t r : rows) u.item_rows.emplace(r, row_copy(gv, r));
  if (visual_transform.valid()) u.visual_transform = grads[visual_transform];
  for (std::size_t l = 0; l < weights.size(); ++l) {
    u.weights.push_back(grads[weights[l]]);
    u.biases.push_back(grads[biases[l]]);
  }
  u.head = grads[head];
  return u;
}

namespace {

void check_items(const BoundParams& p, const std::vector<std::size_t>& items) {
  const std::size_t n = p.item_embeddings.shape()[0];
  for (std::size_t j : items) {
    if (j >= n) throw UnknownItem("item " + std::to_string(j) + " outside catalog of " +
                                  std::to_string(n));
  }
}

// Extractor features of `items` as [n x d], with the override row swapped in.
Var item_features(const BoundParams& p, const std::vector<std::size_t>& items,
                  const std::optional<FeatureOverride>& ov) {
  if (!ov) return gather_rows(p.features, items);
  const std::size_t d = p.features.shape()[1];
  std::vector<Var> parts;
  std::vector<std::size_t> run;
  for (std::size_t j : items) {
    if (j == ov->item) {
      if (!run.empty()) parts.push_back(gather_rows(p.features, run));
      run.clear();
      parts.push_back(reshape(ov->feature, Shape{1, d}));
    } else {
      run.push_back(j);
    }
  }
  if (!run.empty()) parts.push_back(gather_rows(p.features, run));
  return parts.size() == 1 ? parts.front() : concat(parts, 0);
}

// E * phi(i_j) for each listed item, as [n x 32].
Var item_visual(const BoundParams& p, const std::vector<std::size_t>& items,
                const std::optional<FeatureOverride>& ov) {
  return matmul(item_features(p, items, ov), transpose(p.visual_transform));
}

}  // namespace

Propagated propagate(const BoundParams& p, Var user, const std::vector<std::size_t>& neighbors,
                     const std::vector<std::size_t>& items,
                     const std::optional<FeatureOverride>& override_feature) {
  check_items(p, items);
  Var item_rows = gather_rows(p.item_embeddings, items);
  if (!uses_graph(p.kind) || neighbors.empty()) return {user, item_rows};
  check_items(p, neighbors);

  const double norm = 1.0 / std::sqrt(static_cast<double>(neighbors.size()));
  Var msg = gather_rows(p.item_embeddings, neighbors);
  if (uses_visual(p.kind)) msg = add(msg, item_visual(p, neighbors, override_feature));
  Var user_final = add(user, scale(sum_rows(msg), norm));

  // Neighbour items receive u0 / sqrt(|N_u|); every other item has an empty
  // local neighbourhood and keeps its layer-0 embedding.
  Graph& g = user.graph();
  Tensor mask(Shape{items.size(), 1});
  bool any = false;
  for (std::size_t k = 0; k < items.size(); ++k) {
    if (std::binary_search(neighbors.begin(), neighbors.end(), items[k])) {
      mask[k] = norm;
      any = true;
    }
  }
  if (any) {
    Var spread = matmul(g.constant(std::move(mask)), reshape(user, Shape{1, kEmbeddingDim}));
    item_rows = add(item_rows, spread);
  }
  return {user_final, item_rows};
}

ScoreOutput score_items(const BoundParams& p, Var user, const std::vector<std::size_t>& neighbors,
                        const std::vector<std::size_t>& items,
                        const std::optional<FeatureOverride>& override_feature) {
  if (items.empty()) throw EmptyLocalData("no items to score");
  if (user.shape() != Shape{kEmbeddingDim}) {
    throw ShapeMismatch("user embedding must be [32], got " + shape_str(user.shape()));
  }
  const Propagated prop = propagate(p, user, neighbors, items, override_feature);
  std::vector<Var> slots{broadcast_rows(prop.user, items.size()), prop.items};
  if (uses_visual(p.kind)) slots.push_back(item_visual(p, items, override_feature));
  Var h = concat(slots, 1);
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    h = add_bias(matmul(h, p.weights[l]), p.biases[l]);
    if (l + 1 < p.weights.size()) h = relu(h);
  }
  const std::size_t width = p.head.shape()[0];
  Var logits = reshape(matmul(h, reshape(p.head, Shape{width, 1})), Shape{items.size()});
  return {logits, sigmoid(logits)};
}

Var local_loss(const BoundParams& p, Var user, const ClientState& client) {
  if (client.data.empty()) {
    throw EmptyLocalData("client " + std::to_string(client.user_id) + " has no local data");
  }
  std::vector<std::size_t> items;
  std::vector<double> labels;
  for (const auto& r : client.data) {
    items.push_back(r.item);
    labels.push_back(static_cast<double>(r.rating));
  }
  ScoreOutput s = score_items(p, user, client.neighbors(), items);
  return bce_loss(s.probs, Tensor::vector(std::move(labels)));
}

double local_loss_value(const PublicParams& params, const Tensor* features,
                        const ClientState& client) {
  Graph g;
  BoundParams p = BoundParams::bind(g, params, features, false);
  return local_loss(p, g.constant(client.embedding), client).value().item();
}

LocalTrainResult local_train(const ClientState& client, const PublicParams& snapshot,
                             const Tensor* features, std::size_t local_epochs, double lr,
                             std::size_t epoch) {
  if (client.data.empty()) {
    throw EmptyLocalData("client " + std::to_string(client.user_id) + " has no local data");
  }
  LocalTrainResult result{client.embedding, GradientUpload::zeros(snapshot, client.user_id, epoch)};
  std::vector<std::size_t> rows;
  for (const auto& r : client.data) rows.push_back(r.item);
  std::sort(rows.begin(), rows.end());
  rows.erase(std::unique(rows.begin(), rows.end()), rows.end());

  for (std::size_t pass = 0; pass < local_epochs; ++pass) {
    Graph g;
    BoundParams p = BoundParams::bind(g, snapshot, features, true);
    Var u = g.parameter(result.embedding);
    Var loss = local_loss(p, u, client);
    Gradients grads = backward(g, loss);
    result.upload.accumulate(p.collect(grads, rows, client.user_id, epoch));
    sgd_apply(result.embedding, grads[u], lr);
  }
  return result;
}

// ---- value path -----------------------------------------------------------

Scorer::Scorer(const PublicParams& params, const Tensor* features)
    : params_(&params), features_(features) {
  if (params.weights.size() != 2) throw ShapeMismatch("scorer expects a two-layer FFN");
  const std::size_t n = params.num_items();
  const Tensor& w1 = params.weights[0];
  Tensor visual;
  if (uses_visual(params.kind)) {
    if (features == nullptr || features->rank() != 2 || features->dim(0) != n ||
        features->dim(1) != params.feature_dim()) {
      throw DimensionMismatch("visual model needs a [num_items x feature_dim] feature table");
    }
    Tensor et(Shape{params.feature_dim(), kEmbeddingDim});
    for (std::size_t r = 0; r < kEmbeddingDim; ++r) {
      for (std::size_t c = 0; c < params.feature_dim(); ++c) {
        et.at(c, r) = params.visual_transform.at(r, c);
      }
    }
    visual = matmul_values(*features, et);
  }
  item_part_ = Tensor(Shape{n, kHidden});
  for (std::size_t j = 0; j < n; ++j) {
    auto out = item_part_.row(j);
    for (std::size_t o = 0; o < kHidden; ++o) out[o] = params.biases[0][o];
    auto v = params.item_embeddings.row(j);
    for (std::size_t k = 0; k < kEmbeddingDim; ++k) {
      for (std::size_t o = 0; o < kHidden; ++o) out[o] += v[k] * w1.at(kEmbeddingDim + k, o);
    }
    if (!visual.empty()) {
      auto e = visual.row(j);
      for (std::size_t k = 0; k < kEmbeddingDim; ++k) {
        for (std::size_t o = 0; o < kHidden; ++o) {
          out[o] += e[k] * w1.at(2 * kEmbeddingDim + k, o);
        }
      }
    }
  }
}

Tensor Scorer::final_user(const Tensor& user, const std::vector<std::size_t>& neighbors) const {
  Tensor u = user;
  if (!uses_graph(params_->kind) || neighbors.empty()) return u;
  const double norm = 1.0 / std::sqrt(static_cast<double>(neighbors.size()));
  Tensor msg(Shape{kEmbeddingDim});
  for (std::size_t j : neighbors) {
    auto v = params_->item_embeddings.row(j);
    for (std::size_t k = 0; k < kEmbeddingDim; ++k) msg[k] += v[k];
    if (uses_visual(params_->kind)) {
      auto f = features_->row(j);
      for (std::size_t k = 0; k < kEmbeddingDim; ++k) {
        msg[k] += dot(params_->visual_transform.row(k), f);
      }
    }
  }
  for (std::size_t k = 0; k < kEmbeddingDim; ++k) u[k] += msg[k] * norm;
  return u;
}

double Scorer::logit_from(const double* item_part, const double* user_part) const {
  const Tensor& w2 = params_->weights[1];
  const Tensor& b2 = params_->biases[1];
  const Tensor& h = params_->head;
  double hidden[kHidden];
  for (std::size_t o = 0; o < kHidden; ++o) {
    hidden[o] = std::max(0.0, item_part[o] + user_part[o]);
  }
  double logit = 0.0;
  for (std::size_t q = 0; q < kHeadWidth; ++q) {
    double z = b2[q];
    for (std::size_t o = 0; o < kHidden; ++o) z += hidden[o] * w2.at(o, q);
    logit += h[q] * z;
  }
  return logit;
}

std::vector<double> Scorer::logits(const Tensor& user,
                                   const std::vector<std::size_t>& neighbors) const {
  const Tensor& w1 = params_->weights[0];
  const Tensor uf = final_user(user, neighbors);
  double user_part[kHidden] = {};
  for (std::size_t k = 0; k < kEmbeddingDim; ++k) {
    for (std::size_t o = 0; o < kHidden; ++o) user_part[o] += uf[k] * w1.at(k, o);
  }
  const std::size_t n = params_->num_items();
  std::vector<double> out(n);
  for (std::size_t j = 0; j < n; ++j) out[j] = logit_from(item_part_.row(j).data(), user_part);

  if (uses_graph(params_->kind) && !neighbors.empty()) {
    const double norm = 1.0 / std::sqrt(static_cast<double>(neighbors.size()));
    double shift[kHidden] = {};
    for (std::size_t k = 0; k < kEmbeddingDim; ++k) {
      for (std::size_t o = 0; o < kHidden; ++o) {
        shift[o] += user[k] * norm * w1.at(kEmbeddingDim + k, o);
      }
    }
    for (std::size_t j : neighbors) {
      double part[kHidden];
      auto base = item_part_.row(j);
      for (std::size_t o = 0; o < kHidden; ++o) part[o] = base[o] + shift[o];
      out[j] = logit_from(part, user_part);
    }
  }
  return out;
}

double vncf_forward(const Tensor& user, std::size_t item, const PublicParams& params,
                    const Tensor* feature) {
  if (item >= params.num_items()) {
    throw UnknownItem("item " + std::to_string(item) + " outside catalog");
  }
  Graph g;
  std::optional<FeatureOverride> ov;
  Tensor table;
  if (uses_visual(params.kind)) {
    if (feature == nullptr || feature->size() != params.feature_dim()) {
      throw DimensionMismatch("item feature must have feature_dim entries");
    }
    // A blank feature table whose only used row is replaced by the override.
    table = Tensor(Shape{params.num_items(), params.feature_dim()});
  }
  BoundParams p = BoundParams::bind(g, params, uses_visual(params.kind) ? &table : nullptr, false);
  if (uses_visual(params.kind)) ov = FeatureOverride{item, g.constant(*feature)};
  ModelKind flat = uses_visual(params.kind) ? ModelKind::Vncf : ModelKind::Ncf;
  p.kind = flat;
  return score_items(p, g.constant(user), {}, {item}, ov).probs.value()[0];
}

PropagatedValues lightvgcn_propagate(const ClientState& client, const PublicParams& params,
                                     const Tensor* features) {
  Graph g;
  BoundParams p = BoundParams::bind(g, params, features, false);
  const auto nbrs = client.neighbors();
  Propagated prop = propagate(p, g.constant(client.embedding), nbrs, nbrs);
  PropagatedValues out;
  out.user = prop.user.value();
  for (std::size_t k = 0; k < nbrs.size(); ++k) out.items.emplace(nbrs[k], row_copy(prop.items.value(), k));
  return out;
}

std::vector<std::size_t> top_k(const std::vector<double>& scores_by_item,
                               const std::vector<std::size_t>& candidates, std::size_t k) {
  std::vector<std::size_t> order = candidates;
  auto better = [&](std::size_t a, std::size_t b) {
    if (scores_by_item[a] != scores_by_item[b]) return scores_by_item[a] > scores_by_item[b];
    return a < b;
  };
  const std::size_t m = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m), order.end(),
                    better);
  order.resize(m);
  return order;
}

}  // namespace vfr
