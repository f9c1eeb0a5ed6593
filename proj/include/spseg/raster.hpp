#pragma once

// Image rasters: [3,H,W] float tensors in [0,1], zero padding, tiling and
// binary PPM persistence.

#include "spseg/ops.hpp"

#include <filesystem>
#include <vector>

namespace spseg {

using Image = Tensor<float>;

inline Extent2 image_extent(const Image& img) { return {img.dim(1), img.dim(2)}; }

template <typename Scalar>
struct Padded {
  Tensor<Scalar> image;
  Extent2 original;
};

/// Zero-pads bottom/right of a [C,H,W] tensor to the next multiple.
template <typename Scalar>
Padded<Scalar> pad_to_grid(const Tensor<Scalar>& image, Index multiple = 16);

/// Crops the top-left `extent` of a [C,H,W] tensor.
template <typename Scalar>
Tensor<Scalar> crop(const Tensor<Scalar>& image, Extent2 extent);

template <typename Scalar>
Tensor<Scalar> unpad(const Padded<Scalar>& padded) {
  return crop(padded.image, padded.original);
}

struct PositionedTile {
  Image image;      // [3,tile,tile]
  Index row = 0;    // top-left in the raster
  Index col = 0;
  Extent2 valid{};  // part of the tile that lies inside the raster
  bool padded = false;
};

/// Row-major tiles with stride tile-overlap. Tiles per axis are
/// max(1, ceil((L - overlap) / stride)); tiles reaching past the raster edge
/// are zero-filled there and flagged.
std::vector<PositionedTile> tile_raster(const Image& raster, Index tile, Index overlap);

/// Reassembles a raster of `extent`; later tiles overwrite earlier ones on
/// overlaps, so any tiling of the same raster reproduces it exactly.
Image stitch(const std::vector<PositionedTile>& tiles, Extent2 extent);

/// 8-bit binary PPM (P6). Values are clamped to [0,1] and rounded.
void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);

}  // namespace spseg
