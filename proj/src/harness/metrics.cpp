#include "vfr/harness/metrics.hpp"

#include <cmath>

#include "vfr/errors.hpp"

namespace vfr {

namespace {

// Rank (1-based) of `item` among candidates, ties by ascending id.
std::size_t rank_of(const std::vector<double>& scores, const std::vector<bool>& excluded,
                    std::size_t item) {
  std::size_t rank = 1;
  const double s = scores[item];
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (j == item || excluded[j]) continue;
    if (scores[j] > s || (scores[j] == s && j < item)) ++rank;
  }
  return rank;
}

}  // namespace

RankingMetrics ranking_metrics(const PublicParams& params, const Tensor* features,
                               const std::vector<ClientState>& clients,
                               const std::vector<std::size_t>& targets, std::size_t er_k,
                               const EvalSplit* split, std::size_t ndcg_k) {
  if (er_k == 0 || ndcg_k == 0) throw InvalidConfig("K must be at least 1");
  const std::size_t n = params.num_items();
  for (std::size_t t : targets) {
    if (t >= n) throw UnknownItem("target " + std::to_string(t) + " outside catalog");
  }
  const Scorer scorer(params, features);
  std::vector<std::size_t> exposed(targets.size(), 0), eligible(targets.size(), 0);
  double dcg = 0.0;
  for (const ClientState& c : clients) {
    const auto mask = c.interacted_mask(n);
    const auto scores = scorer.logits(c.embedding, c.neighbors());
    for (std::size_t k = 0; k < targets.size(); ++k) {
      if (mask[targets[k]]) continue;
      ++eligible[k];
      if (rank_of(scores, mask, targets[k]) <= er_k) ++exposed[k];
    }
    if (split != nullptr) {
      const std::size_t held = split->held_out.at(c.user_id);
      if (mask[held]) continue;
      const std::size_t r = rank_of(scores, mask, held);
      if (r <= ndcg_k) dcg += 1.0 / std::log2(static_cast<double>(r) + 1.0);
    }
  }
  RankingMetrics out;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    if (eligible[k] == 0) {
      throw NoEligibleUsers("every user interacted with target " + std::to_string(targets[k]));
    }
    out.exposure.per_target.push_back(static_cast<double>(exposed[k]) /
                                      static_cast<double>(eligible[k]));
    out.exposure.mean += out.exposure.per_target.back();
  }
  if (!targets.empty()) out.exposure.mean /= static_cast<double>(targets.size());
  if (split != nullptr && !clients.empty()) out.ndcg = dcg / static_cast<double>(clients.size());
  return out;
}

ExposureReport exposure_rate_at_k(const PublicParams& params, const Tensor* features,
                                  const std::vector<ClientState>& clients,
                                  const std::vector<std::size_t>& targets, std::size_t k) {
  return ranking_metrics(params, features, clients, targets, k, nullptr, 1).exposure;
}

double ndcg_at_k(const PublicParams& params, const Tensor* features,
                 const std::vector<ClientState>& clients, const EvalSplit* split, std::size_t k) {
  if (split == nullptr) throw MissingSplit("NDCG needs an evaluation split");
  return ranking_metrics(params, features, clients, {}, 1, split, k).ndcg;
}

double blur_variance(const ImageAsset& image) {
  const std::size_t h = image.height, w = image.width;
  if (h < 3 || w < 3) return 0.0;
  std::vector<double> gray(h * w);
  for (std::size_t p = 0; p < h * w; ++p) {
    gray[p] = 0.299 * image.pixels[3 * p] + 0.587 * image.pixels[3 * p + 1] +
              0.114 * image.pixels[3 * p + 2];
  }
  std::vector<double> resp;
  resp.reserve((h - 2) * (w - 2));
  for (std::size_t y = 1; y + 1 < h; ++y) {
    for (std::size_t x = 1; x + 1 < w; ++x) {
      const std::size_t c = y * w + x;
      resp.push_back(gray[c - w] + gray[c + w] + gray[c - 1] + gray[c + 1] - 4.0 * gray[c]);
    }
  }
  double mean = 0.0;
  for (double r : resp) mean += r;
  mean /= static_cast<double>(resp.size());
  double var = 0.0;
  for (double r : resp) var += (r - mean) * (r - mean);
  return var / static_cast<double>(resp.size());
}

double catalog_blur_stddev(const std::vector<ImageAsset>& images) {
  if (images.empty()) return 0.0;
  std::vector<double> v;
  for (const auto& img : images) v.push_back(blur_variance(img));
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return std::sqrt(var / static_cast<double>(v.size()));
}

}  // namespace vfr
