#include "spseg/raster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace spseg {
namespace {

void require_chw(const Shape& s, const char* who) {
  if (s.size() != 3) throw ShapeError(std::string(who) + ": expects [C,H,W], got " + to_string(s));
}

Index round_up(Index v, Index m) { return (v + m - 1) / m * m; }

}  // namespace

template <typename Scalar>
Padded<Scalar> pad_to_grid(const Tensor<Scalar>& image, Index multiple) {
  require_chw(image.shape(), "pad_to_grid");
  if (multiple < 1) throw ConfigError("pad_to_grid: multiple must be positive");
  const Index c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const Index ph = std::max(round_up(h, multiple), multiple), pw = std::max(round_up(w, multiple), multiple);
  Tensor<Scalar> out({c, ph, pw});
  for (Index ch = 0; ch < c; ++ch)
    out.matrix(ph, pw, ch * ph * pw).topLeftCorner(h, w) = image.matrix(h, w, ch * h * w);
  return {std::move(out), {h, w}};
}

template <typename Scalar>
Tensor<Scalar> crop(const Tensor<Scalar>& image, Extent2 e) {
  require_chw(image.shape(), "crop");
  const Index c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (e.height > h || e.width > w || e.height < 0 || e.width < 0)
    throw ShapeError("crop: extent " + std::to_string(e.height) + "x" + std::to_string(e.width) +
                     " exceeds " + to_string(image.shape()));
  Tensor<Scalar> out({c, e.height, e.width});
  for (Index ch = 0; ch < c; ++ch)
    out.matrix(e.height, e.width, ch * e.height * e.width) =
        image.matrix(h, w, ch * h * w).topLeftCorner(e.height, e.width);
  return out;
}

std::vector<PositionedTile> tile_raster(const Image& raster, Index tile, Index overlap) {
  require_chw(raster.shape(), "tile_raster");
  if (overlap < 0 || tile <= overlap) throw ConfigError("tile_raster: requires tile > overlap >= 0");
  const Index c = raster.dim(0), h = raster.dim(1), w = raster.dim(2);
  const Index stride = tile - overlap;
  auto count = [&](Index len) {
    return std::max<Index>(1, (len - overlap + stride - 1) / stride);
  };
  const Index rows = count(h), cols = count(w);
  std::vector<PositionedTile> tiles;
  tiles.reserve(static_cast<std::size_t>(rows * cols));
  for (Index r = 0; r < rows; ++r) {
    for (Index q = 0; q < cols; ++q) {
      PositionedTile t;
      t.row = r * stride;
      t.col = q * stride;
      t.valid = {std::min(tile, h - t.row), std::min(tile, w - t.col)};
      t.padded = t.valid.height < tile || t.valid.width < tile;
      t.image = Image({c, tile, tile});
      for (Index ch = 0; ch < c; ++ch)
        t.image.matrix(tile, tile, ch * tile * tile).topLeftCorner(t.valid.height, t.valid.width) =
            raster.matrix(h, w, ch * h * w).block(t.row, t.col, t.valid.height, t.valid.width);
      tiles.push_back(std::move(t));
    }
  }
  return tiles;
}

Image stitch(const std::vector<PositionedTile>& tiles, Extent2 extent) {
  if (tiles.empty()) throw ConfigError("stitch: no tiles");
  const Index c = tiles.front().image.dim(0);
  Image out({c, extent.height, extent.width});
  for (const auto& t : tiles) {
    const Index th = t.image.dim(1), tw = t.image.dim(2);
    const Index vh = std::min(t.valid.height, extent.height - t.row);
    const Index vw = std::min(t.valid.width, extent.width - t.col);
    if (vh <= 0 || vw <= 0) continue;
    for (Index ch = 0; ch < c; ++ch)
      out.matrix(extent.height, extent.width, ch * extent.height * extent.width).block(t.row, t.col, vh, vw) =
          t.image.matrix(th, tw, ch * th * tw).topLeftCorner(vh, vw);
  }
  return out;
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
  require_chw(image.shape(), "write_ppm");
  if (image.dim(0) != 3) throw ShapeError("write_ppm: expects 3 channels, got " + to_string(image.shape()));
  const Index h = image.dim(1), w = image.dim(2);
  std::string bytes = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  const std::size_t header = bytes.size();
  bytes.resize(header + static_cast<std::size_t>(3 * h * w));
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index ch = 0; ch < 3; ++ch) {
        const float v = std::clamp(image(ch, y, x), 0.0f, 1.0f);
        bytes[header + static_cast<std::size_t>((y * w + x) * 3 + ch)] =
            static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f)));
      }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_ppm: cannot open " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write_ppm: write failed for " + path.string());
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_ppm: cannot open " + path.string());
  auto token = [&]() {
    std::string t;
    char ch;
    while (in.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!t.empty()) break;
        continue;
      }
      t += ch;
    }
    return t;
  };
  if (token() != "P6") throw std::runtime_error("read_ppm: " + path.string() + " is not a binary PPM");
  Index w = 0, h = 0, maxval = 0;
  try {
    w = std::stoll(token());
    h = std::stoll(token());
    maxval = std::stoll(token());
  } catch (const std::exception&) {
    throw std::runtime_error("read_ppm: malformed header in " + path.string());
  }
  if (w < 1 || h < 1 || maxval != 255) throw std::runtime_error("read_ppm: unsupported header in " + path.string());
  std::string bytes(static_cast<std::size_t>(3 * w * h), '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw std::runtime_error("read_ppm: truncated pixel data in " + path.string());
  Image img({3, h, w});
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index ch = 0; ch < 3; ++ch)
        img(ch, y, x) = static_cast<float>(static_cast<unsigned char>(bytes[static_cast<std::size_t>((y * w + x) * 3 + ch)])) / 255.0f;
  return img;
}

template Padded<float> pad_to_grid<float>(const Tensor<float>&, Index);
template Padded<double> pad_to_grid<double>(const Tensor<double>&, Index);
template Tensor<float> crop<float>(const Tensor<float>&, Extent2);
template Tensor<double> crop<double>(const Tensor<double>&, Extent2);

}  // namespace spseg
