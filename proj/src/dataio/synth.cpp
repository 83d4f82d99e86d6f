#include "vfr/dataio/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "vfr/errors.hpp"
#include "vfr/rng.hpp"

namespace vfr {

ImageAsset synth_image(std::uint64_t seed, std::uint64_t key, std::size_t category,
                       std::size_t num_categories, std::size_t side) {
  Rng rng(derive_seed(seed, "image", 0, key));
  constexpr double kTau = 2.0 * std::numbers::pi;
  const double hue = kTau * static_cast<double>(category) /
                         static_cast<double>(std::max<std::size_t>(num_categories, 1)) +
                     rng.normal(0.0, 0.25);
  double base[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = 128.0 + (70.0 * std::cos(hue + kTau * c / 3.0) + rng.normal(0.0, 12.0));
  }
  struct Wave {
    double fx, fy, phase, amp[3];
  };
  Wave waves[2];
  for (auto& w : waves) {
    const double angle = rng.uniform(0.0, kTau);
    const double period = rng.uniform(10.0, 32.0);
    w.fx = kTau * std::cos(angle) / period;
    w.fy = kTau * std::sin(angle) / period;
    w.phase = rng.uniform(0.0, kTau);
    for (double& a : w.amp) a = rng.uniform(-35.0, 35.0);
  }
  const double grain = rng.uniform(0.0, 6.0);

  ImageAsset img;
  img.item_id = key;
  img.height = img.width = side;
  img.pixels.resize(img.num_values());
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      for (int c = 0; c < 3; ++c) {
        double v = base[c];
        for (const auto& w : waves) {
          v += w.amp[c] * std::sin(w.fx * static_cast<double>(x) + w.fy * static_cast<double>(y) +
                                   w.phase);
        }
        v += grain * rng.uniform(-1.0, 1.0);
        img.pixels[(y * side + x) * 3 + static_cast<std::size_t>(c)] =
            static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return img;
}

SynthWorld synth_world(const SynthParams& p) {
  if (!(p.density > 0.0 && p.density < 1.0)) {
    throw InfeasibleDensity("density must lie in (0,1)");
  }
  if (p.num_users == 0 || p.num_items < kMinPositivesPerUser) {
    throw InfeasibleDensity("need at least " + std::to_string(kMinPositivesPerUser) +
                            " items for 5 positives per user");
  }
  SynthWorld w;
  w.catalog.num_users = p.num_users;
  w.catalog.num_items = p.num_items;
  Rng rng(derive_seed(p.seed, "world"));

  std::vector<std::size_t> rank(p.num_items);
  std::iota(rank.begin(), rank.end(), 0);
  rng.shuffle(rank);
  std::vector<double> weight(p.num_items);
  w.item_category.resize(p.num_items);
  for (std::size_t j = 0; j < p.num_items; ++j) {
    weight[j] = std::pow(static_cast<double>(rank[j] + 1), -p.popularity_exponent);
    w.item_category[j] = rng.below(std::max<std::size_t>(p.num_categories, 1));
  }

  const double mean_pos = p.density * static_cast<double>(p.num_items);
  for (std::size_t u = 0; u < p.num_users; ++u) {
    const std::size_t pref = rng.below(std::max<std::size_t>(p.num_categories, 1));
    const double jitter = rng.uniform(0.5, 1.5);
    std::size_t n = static_cast<std::size_t>(std::lround(mean_pos * jitter));
    n = std::clamp(n, kMinPositivesPerUser, p.num_items);
    std::vector<double> wu(p.num_items);
    for (std::size_t j = 0; j < p.num_items; ++j) {
      wu[j] = weight[j] * (w.item_category[j] == pref ? p.category_affinity : 1.0);
    }
    std::vector<std::size_t> chosen;
    for (std::size_t k = 0; k < n; ++k) {
      const double total = std::accumulate(wu.begin(), wu.end(), 0.0);
      double r = rng.uniform() * total;
      std::size_t pick = p.num_items - 1;
      for (std::size_t j = 0; j < p.num_items; ++j) {
        if (wu[j] <= 0.0) continue;
        if (r < wu[j]) {
          pick = j;
          break;
        }
        r -= wu[j];
      }
      while (wu[pick] <= 0.0) --pick;  // rounding fell off the end
      wu[pick] = 0.0;
      chosen.push_back(pick);
    }
    std::sort(chosen.begin(), chosen.end());
    for (auto j : chosen) w.records.push_back({u, j, 1});
  }
  w.catalog.popularity = count_popularity(w.records, p.num_items);

  w.images.reserve(p.num_items);
  for (std::size_t j = 0; j < p.num_items; ++j) {
    auto img = synth_image(p.seed, j, w.item_category[j], p.num_categories, p.image_side);
    img.item_id = j;
    img.provider_id = j;
    w.images.push_back(std::move(img));
  }
  return w;
}

std::vector<ImageAsset> synth_clean_corpus(std::uint64_t seed, std::size_t count,
                                           std::size_t side, std::size_t num_categories) {
  std::vector<ImageAsset> out;
  out.reserve(count);
  Rng rng(derive_seed(seed, "corpus"));
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t cat = rng.below(std::max<std::size_t>(num_categories, 1));
    // Keys live far above any catalog id.
    auto img = synth_image(derive_seed(seed, "corpus_image"), (1ULL << 40) + k, cat,
                           num_categories, side);
    img.item_id = k;
    out.push_back(std::move(img));
  }
  return out;
}

}  // namespace vfr
