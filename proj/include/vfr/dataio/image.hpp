#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "vfr/numcore/tensor.hpp"

namespace vfr {

inline constexpr std::size_t kDefaultImageSide = 16;

// An item's picture: 8-bit RGB, row-major, interleaved (H x W x 3).
struct ImageAsset {
  std::size_t item_id = 0;
  std::size_t height = kDefaultImageSide;
  std::size_t width = kDefaultImageSide;
  std::vector<std::uint8_t> pixels;
  std::size_t provider_id = 0;
  std::size_t uploaded_epoch = 0;
  bool ground_truth_adversarial = false;  // test metadata only; never read by the server

  std::size_t num_values() const { return height * width * 3; }

  // Channel-major [3, H, W] view with value = pixel / 127.5 - 1.
  Tensor normalized() const;
  // Inverse of normalized(): clip to [-1, 1], map back and round to the 0..255 grid.
  static std::vector<std::uint8_t> quantize(const Tensor& normalized);

  friend bool operator==(const ImageAsset&, const ImageAsset&) = default;
};

// Binary P6, maxval 255 only. Expected dimensions of 0 accept any size.
ImageAsset read_ppm(std::istream& in, std::size_t expect_h = 0, std::size_t expect_w = 0);
ImageAsset load_ppm(const std::filesystem::path& path, std::size_t expect_h = 0,
                    std::size_t expect_w = 0);
void write_ppm(const ImageAsset& asset, std::ostream& out);
void save_ppm(const ImageAsset& asset, const std::filesystem::path& path);

}  // namespace vfr
