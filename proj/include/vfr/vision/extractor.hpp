#pragma once

#include <cstddef>
#include <cstdint>

#include "vfr/numcore/autodiff.hpp"
#include "vfr/numcore/tensor.hpp"

namespace vfr {

struct ExtractorConfig {
  std::size_t image_side = 16;
  double leak = 0.1;
  bool zero_bias = false;
  // Applied to the pooled features so that the visual input of the
  // recommender starts on the scale of its 0.1-initialised embeddings.
  double output_scale = 0.1;
};

// Frozen visual feature extractor: two stride-2 3x3 convolutions (8 then 16
// channels) with leaky rectifiers, average-pooled to a 2x2 grid and
// flattened, giving 64 features for a 16x16 input. Weights are drawn once
// from the seed and never change; gradients flow to the image only.
class Extractor {
 public:
  explicit Extractor(std::uint64_t seed, ExtractorConfig config = {});

  std::size_t output_dim() const { return kConv2Channels * kPoolGrid * kPoolGrid; }
  std::size_t image_side() const { return config_.image_side; }
  std::uint64_t seed() const { return seed_; }

  // image: normalized [3, side, side].
  Tensor extract(const Tensor& image) const;
  // Differentiable path. Weights enter the graph as constants.
  Var extract(Graph& graph, Var image) const;

  // Flattened copy of all weights, for regression checks.
  Tensor weight_snapshot() const;

 private:
  static constexpr std::size_t kConv1Channels = 8;
  static constexpr std::size_t kConv2Channels = 16;
  static constexpr std::size_t kPoolGrid = 2;

  void check_image(const Tensor& image) const;

  std::uint64_t seed_;
  ExtractorConfig config_;
  Tensor w1_, b1_, w2_, b2_;
};

// ||phi(image + delta) - phi(image)|| / ||delta||, with image + delta clipped
// to [-1, 1]. Defined as 0 for delta = 0.
double feature_jacobian_sensitivity(const Extractor& extractor, const Tensor& image,
                                    const Tensor& delta);

}  // namespace vfr
