#include "vfr/vision/extractor.hpp"

#include <algorithm>
#include <cmath>

#include "vfr/errors.hpp"
#include "vfr/rng.hpp"

namespace vfr {

namespace {

Tensor he_normal(Rng& rng, Shape shape, std::size_t fan_in) {
  Tensor t(std::move(shape));
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : t.values()) v = rng.normal(0.0, sd);
  return t;
}

}  // namespace

Extractor::Extractor(std::uint64_t seed, ExtractorConfig config) : seed_(seed), config_(config) {
  if (config_.image_side % 8 != 0) {
    throw DimensionMismatch("extractor image side must be a multiple of 8");
  }
  Rng rng(derive_seed(seed, "extractor"));
  w1_ = he_normal(rng, {kConv1Channels, 3, 3, 3}, 27);
  w2_ = he_normal(rng, {kConv2Channels, kConv1Channels, 3, 3}, kConv1Channels * 9);
  b1_ = Tensor(Shape{kConv1Channels});
  b2_ = Tensor(Shape{kConv2Channels});
  if (!config_.zero_bias) {
    for (auto& v : b1_.values()) v = rng.normal(0.0, 0.05);
    for (auto& v : b2_.values()) v = rng.normal(0.0, 0.05);
  }
}

void Extractor::check_image(const Tensor& image) const {
  if (image.shape() != Shape{3, config_.image_side, config_.image_side}) {
    throw DimensionMismatch("extractor expects [3," + std::to_string(config_.image_side) + "," +
                            std::to_string(config_.image_side) + "], got " +
                            shape_str(image.shape()));
  }
}

Var Extractor::extract(Graph& graph, Var image) const {
  check_image(image.value());
  Var h = conv2d(image, graph.constant(w1_), 2, 1);
  h = leaky_relu(add_channel_bias(h, graph.constant(b1_)), config_.leak);
  h = conv2d(h, graph.constant(w2_), 2, 1);
  h = leaky_relu(add_channel_bias(h, graph.constant(b2_)), config_.leak);
  h = avg_pool(h, kPoolGrid, kPoolGrid);
  if (config_.output_scale != 1.0) h = scale(h, config_.output_scale);
  return reshape(h, Shape{output_dim()});
}

Tensor Extractor::extract(const Tensor& image) const {
  Graph graph;
  return extract(graph, graph.constant(image)).value();
}

Tensor Extractor::weight_snapshot() const {
  std::vector<double> all;
  for (const Tensor* t : {&w1_, &b1_, &w2_, &b2_}) {
    all.insert(all.end(), t->values().begin(), t->values().end());
  }
  return Tensor::vector(std::move(all));
}

double feature_jacobian_sensitivity(const Extractor& extractor, const Tensor& image,
                                    const Tensor& delta) {
  require_same_shape(image, delta, "feature_jacobian_sensitivity");
  Tensor moved = image;
  for (std::size_t i = 0; i < moved.size(); ++i) {
    moved[i] = std::clamp(image[i] + delta[i], -1.0, 1.0);
  }
  Tensor applied = moved;
  applied -= image;
  const double dn = l2_norm(applied.values());
  if (dn == 0.0) return 0.0;
  Tensor diff = extractor.extract(moved);
  diff -= extractor.extract(image);
  return l2_norm(diff.values()) / dn;
}

}  // namespace vfr
