#pragma once

#include <cstddef>
#include <vector>

#include "vfr/dataio/image.hpp"
#include "vfr/dataio/interactions.hpp"
#include "vfr/recmodels/model.hpp"

namespace vfr {

struct ExposureReport {
  double mean = 0.0;
  std::vector<double> per_target;
};

// For each target: share of users who never interacted with it whose top-K
// over their non-interacted items contains it. Averaged over targets.
ExposureReport exposure_rate_at_k(const PublicParams& params, const Tensor* features,
                                  const std::vector<ClientState>& clients,
                                  const std::vector<std::size_t>& targets, std::size_t k);

// Mean over users of 1/log2(rank + 1) for the held-out item when its rank among
// the user's candidates is at most K, else 0.
double ndcg_at_k(const PublicParams& params, const Tensor* features,
                 const std::vector<ClientState>& clients, const EvalSplit* split,
                 std::size_t k = 20);

// Both metrics in one pass over users (one scoring per user).
struct RankingMetrics {
  ExposureReport exposure;
  double ndcg = 0.0;
};
RankingMetrics ranking_metrics(const PublicParams& params, const Tensor* features,
                               const std::vector<ClientState>& clients,
                               const std::vector<std::size_t>& targets, std::size_t er_k,
                               const EvalSplit* split, std::size_t ndcg_k);

// Variance of the 3x3 Laplacian response (4-neighbour kernel, valid region)
// over the grayscale image.
double blur_variance(const ImageAsset& image);
double catalog_blur_stddev(const std::vector<ImageAsset>& images);

}  // namespace vfr
