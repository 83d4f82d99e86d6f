#include "vfr/dataio/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "vfr/errors.hpp"

namespace vfr {

Tensor ImageAsset::normalized() const {
  if (pixels.size() != num_values()) {
    throw DimensionMismatch("image has " + std::to_string(pixels.size()) + " values, expected " +
                            std::to_string(num_values()));
  }
  Tensor out(Shape{3, height, width});
  const std::size_t plane = height * width;
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < 3; ++c) {
      out[c * plane + p] = static_cast<double>(pixels[p * 3 + c]) / 127.5 - 1.0;
    }
  }
  return out;
}

std::vector<std::uint8_t> ImageAsset::quantize(const Tensor& normalized) {
  if (normalized.rank() != 3 || normalized.dim(0) != 3) {
    throw DimensionMismatch("expected [3,H,W], got " + shape_str(normalized.shape()));
  }
  const std::size_t plane = normalized.dim(1) * normalized.dim(2);
  std::vector<std::uint8_t> px(plane * 3);
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = std::clamp(normalized[c * plane + p], -1.0, 1.0);
      px[p * 3 + c] = static_cast<std::uint8_t>(std::lround((v + 1.0) * 127.5));
    }
  }
  return px;
}

namespace {

// Next header token, skipping whitespace and '#' comments.
std::string header_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

std::size_t header_number(std::istream& in, const char* what) {
  const auto tok = header_token(in);
  if (tok.empty() || !std::all_of(tok.begin(), tok.end(), ::isdigit)) {
    throw UnsupportedFormat(std::string("bad PPM ") + what + " '" + tok + "'");
  }
  return std::stoul(tok);
}

}  // namespace

ImageAsset read_ppm(std::istream& in, std::size_t expect_h, std::size_t expect_w) {
  if (header_token(in) != "P6") throw UnsupportedFormat("not a binary PPM (P6)");
  ImageAsset a;
  a.width = header_number(in, "width");
  a.height = header_number(in, "height");
  const auto maxval = header_number(in, "maxval");
  if (maxval != 255) throw UnsupportedFormat("maxval " + std::to_string(maxval) + " unsupported");
  if (a.width == 0 || a.height == 0) throw UnsupportedFormat("empty PPM");
  if ((expect_h && a.height != expect_h) || (expect_w && a.width != expect_w)) {
    throw DimensionMismatch("image is " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                            ", expected " + std::to_string(expect_h) + "x" +
                            std::to_string(expect_w));
  }
  a.pixels.resize(a.num_values());
  in.read(reinterpret_cast<char*>(a.pixels.data()), static_cast<std::streamsize>(a.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(a.pixels.size())) {
    throw UnsupportedFormat("truncated PPM payload");
  }
  return a;
}

ImageAsset load_ppm(const std::filesystem::path& path, std::size_t expect_h, std::size_t expect_w) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_ppm(in, expect_h, expect_w);
}

void write_ppm(const ImageAsset& asset, std::ostream& out) {
  if (asset.pixels.size() != asset.num_values()) {
    throw DimensionMismatch("pixel buffer does not match image dimensions");
  }
  out << "P6\n" << asset.width << ' ' << asset.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(asset.pixels.data()),
            static_cast<std::streamsize>(asset.pixels.size()));
}

void save_ppm(const ImageAsset& asset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  write_ppm(asset, out);
}

}  // namespace vfr
