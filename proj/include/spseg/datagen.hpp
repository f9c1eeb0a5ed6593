#pragma once

// Synthetic polygonal-terrain scenes: a seeded point process, its Voronoi
// tessellation, dark troughs along cell borders and per-cell rim/centre
// shading. Also the dataset manifest, splitting and parallel generation.

#include "spseg/mask.hpp"
#include "spseg/matching.hpp"
#include "spseg/raster.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace spseg {

inline constexpr Index kMaxPolygonsPerTile = 447;

struct SceneConfig {
  Index tile_extent = 226;
  Index min_polygons = 20;
  Index max_polygons = 60;
  double low_centered_fraction = 0.5;
  Index trough_width = 3;
  double noise_amplitude = 0.04;
  Index num_classes = 1;  // 2 separates low- and high-centred cells
  std::uint64_t seed = 0;

  void validate() const;
  /// Pixel radius around a cell border that is rendered as trough.
  Index trough_radius() const { return std::max<Index>(1, (trough_width + 1) / 2); }
};

/// FNV-1a over the canonical text of every field except the seed.
std::uint64_t config_hash(const SceneConfig& cfg);

struct Vertex {
  double x = 0, y = 0;
};

struct Instance {
  BinaryMask mask;
  Index class_id = 0;
  bool low_centered = true;
  std::vector<Vertex> polygon;  // Voronoi cell outline, counter-clockwise, pixel units
};

struct AnnotatedTile {
  std::string tile_id;
  Image image;  // [3,H,W], 8-bit quantized values in [0,1]
  std::vector<Instance> instances;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;

  Extent2 extent() const { return image_extent(image); }
};

AnnotatedTile generate_scene(const SceneConfig& cfg, std::string tile_id = "tile");

/// Pixels within the trough radius of a differently labelled pixel.
BinaryMask trough_mask(const Eigen::Array<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& labels,
                       Index radius);

struct DatasetSplit {
  std::vector<std::string> train, val, test;
};

/// Seeded shuffle, then val = test = max(1, round(0.15 n)) and train gets
/// the rest. Requires n >= 3.
DatasetSplit split_dataset(std::vector<std::string> tile_ids, std::uint64_t seed);

struct DatasetConfig {
  SceneConfig scene;
  Index tiles = 64;
  std::uint64_t master_seed = 0;
  Index threads = 0;  // 0: hardware concurrency capped by SPSEG_THREADS
};

/// Worker count: `requested` if positive, else hardware concurrency; always
/// capped by the SPSEG_THREADS environment variable when set.
Index worker_count(Index requested = 0);

/// Tile i uses seed derive_seed(master_seed, i), so the result does not
/// depend on the thread count.
std::vector<AnnotatedTile> generate_dataset(const DatasetConfig& cfg);

struct Dataset {
  std::vector<AnnotatedTile> tiles;
  DatasetSplit split;
  std::uint64_t master_seed = 0;
  std::uint64_t config_hash = 0;

  const AnnotatedTile& tile(const std::string& id) const;
  std::vector<const AnnotatedTile*> subset(const std::vector<std::string>& ids) const;
};

/// Writes <dir>/manifest.iwp and <dir>/images/<tile>.ppm.
void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& dir);
std::string manifest_text(const Dataset& dataset);

/// Ground truth of a tile padded to the 16-pixel grid, as training targets.
template <typename Scalar>
InstanceTargets<Scalar> tile_targets(const AnnotatedTile& tile, Index multiple = 16);

}  // namespace spseg
