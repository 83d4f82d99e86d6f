#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

#include "vfr/dataio/interactions.hpp"
#include "vfr/recmodels/model.hpp"
#include "vfr/rng.hpp"

// Brute-force ranking metrics on tiny random worlds: every user's candidate
// list is fully sorted from the differentiable scoring path and read off
// directly, sharing nothing with the library's metric code.
namespace vfr::test {

struct TinyWorld {
  PublicParams params;
  Tensor features;
  std::vector<ClientState> clients;
  EvalSplit split;
  std::vector<std::size_t> targets;
};

inline TinyWorld tiny_world(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "tiny"));
  const ModelKind kinds[] = {ModelKind::Ncf, ModelKind::Vncf, ModelKind::LightGcn, ModelKind::LightVgcn};
  TinyWorld w;
  const std::size_t users = 1 + rng.below(10);
  const std::size_t items = 2 + rng.below(9);
  const std::size_t fdim = 5;
  w.params = PublicParams::init(kinds[rng.below(4)], items, fdim, seed);
  w.features = Tensor(Shape{items, fdim});
  for (double& v : w.features.values()) v = rng.normal();
  for (std::size_t u = 0; u < users; ++u) {
    ClientState c = ClientState::init(u, {}, seed);
    for (std::size_t j = 0; j < items; ++j) {
      const double r = rng.uniform();
      if (r < 0.3) c.data.push_back({u, j, 1});
      else if (r < 0.5) c.data.push_back({u, j, 0});
    }
    w.split.held_out.push_back(rng.below(items));
    w.clients.push_back(std::move(c));
  }
  // Only targets somebody has not interacted with.
  for (std::size_t j = 0; j < items; ++j) {
    const bool open = std::any_of(w.clients.begin(), w.clients.end(), [&](const ClientState& c) {
      return !c.interacted_mask(items)[j];
    });
    if (open && rng.uniform() < 0.4) w.targets.push_back(j);
  }
  return w;
}

// The full ranked candidate list of one user, from the differentiable path.
inline std::vector<std::size_t> ranking(const TinyWorld& w, const ClientState& c) {
  const std::size_t n = w.params.num_items();
  std::set<std::size_t> positives;
  for (const auto& r : c.data) {
    if (r.rating == 1) positives.insert(r.item);
  }
  std::vector<std::size_t> all(n);
  for (std::size_t j = 0; j < n; ++j) all[j] = j;
  Graph g;
  const BoundParams b = BoundParams::bind(g, w.params, uses_visual(w.params.kind) ? &w.features : nullptr, false);
  const std::vector<std::size_t> nbrs(positives.begin(), positives.end());
  const Tensor logits = score_items(b, g.constant(c.embedding), nbrs, all).logits.value();
  std::vector<std::size_t> order;
  for (std::size_t j = 0; j < n; ++j) {
    if (!positives.count(j)) order.push_back(j);
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t z) {
    return logits[a] != logits[z] ? logits[a] > logits[z] : a < z;
  });
  return order;
}

inline double brute_er(const TinyWorld& w, std::size_t k) {
  double total = 0.0;
  for (std::size_t t : w.targets) {
    std::size_t eligible = 0, exposed = 0;
    for (const auto& c : w.clients) {
      const auto order = ranking(w, c);
      if (std::find(order.begin(), order.end(), t) == order.end()) continue;
      ++eligible;
      const auto top_end = order.begin() + static_cast<long>(std::min(k, order.size()));
      if (std::find(order.begin(), top_end, t) != top_end) ++exposed;
    }
    total += static_cast<double>(exposed) / static_cast<double>(eligible);
  }
  return w.targets.empty() ? 0.0 : total / static_cast<double>(w.targets.size());
}

inline double brute_ndcg(const TinyWorld& w, std::size_t k) {
  double total = 0.0;
  for (const auto& c : w.clients) {
    const auto order = ranking(w, c);
    const auto it = std::find(order.begin(), order.end(), w.split.held_out[c.user_id]);
    if (it == order.end()) continue;
    const auto rank = static_cast<std::size_t>(it - order.begin()) + 1;
    if (rank <= k) total += 1.0 / std::log2(static_cast<double>(rank) + 1.0);
  }
  return total / static_cast<double>(w.clients.size());
}

}  // namespace vfr::test
