#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "vfr/dataio/image.hpp"
#include "vfr/dataio/interactions.hpp"

namespace vfr {

struct SynthParams {
  std::uint64_t seed = 1;
  std::size_t num_users = 200;
  std::size_t num_items = 100;
  // Target fraction of the user-item matrix that is positive. Every user
  // still gets at least 5 positives.
  double density = 0.06;
  // Item sampling weight ~ (popularity rank + 1)^-exponent.
  double popularity_exponent = 1.0;
  std::size_t image_side = kDefaultImageSide;
  // Items belong to visual categories; users favour one category.
  std::size_t num_categories = 4;
  double category_affinity = 3.0;
};

struct SynthWorld {
  Catalog catalog;
  std::vector<InteractionRecord> records;  // positives only
  std::vector<ImageAsset> images;          // one per item, indexed by item id
  std::vector<std::size_t> item_category;
};

inline constexpr std::size_t kMinPositivesPerUser = 5;

SynthWorld synth_world(const SynthParams& params);

// Smooth colour field with a category tint and a provider-dependent amount
// of sensor grain. Deterministic in (seed, key).
ImageAsset synth_image(std::uint64_t seed, std::uint64_t key, std::size_t category,
                       std::size_t num_categories, std::size_t side);

// Clean images from the same family, keyed away from any catalog item.
std::vector<ImageAsset> synth_clean_corpus(std::uint64_t seed, std::size_t count,
                                           std::size_t side, std::size_t num_categories);

}  // namespace vfr
