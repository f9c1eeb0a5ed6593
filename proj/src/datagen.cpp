#include "spseg/datagen.hpp"

#include "spseg/rng.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

namespace spseg {
namespace {

using LabelMap = Eigen::Array<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = kFnvOffset) {
  for (unsigned char c : s) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct Point {
  Index x, y;  // pixel; the seed sits at the pixel centre
};

std::vector<Vertex> voronoi_cell(const std::vector<Point>& pts, std::size_t i, double extent) {
  std::vector<Vertex> poly{{0, 0}, {extent, 0}, {extent, extent}, {0, extent}};
  const double sx = pts[i].x + 0.5, sy = pts[i].y + 0.5;
  std::vector<Vertex> next;
  for (std::size_t j = 0; j < pts.size() && !poly.empty(); ++j) {
    if (j == i) continue;
    const double ox = pts[j].x + 0.5, oy = pts[j].y + 0.5;
    const double nx = ox - sx, ny = oy - sy;
    const double c = nx * (sx + ox) / 2 + ny * (sy + oy) / 2;
    auto inside = [&](const Vertex& v) { return nx * v.x + ny * v.y <= c; };
    next.clear();
    for (std::size_t k = 0; k < poly.size(); ++k) {
      const Vertex& a = poly[k];
      const Vertex& b = poly[(k + 1) % poly.size()];
      const bool ia = inside(a), ib = inside(b);
      if (ia) next.push_back(a);
      if (ia != ib) {
        const double da = nx * a.x + ny * a.y - c, db = nx * b.x + ny * b.y - c;
        const double t = da / (da - db);
        next.push_back({a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)});
      }
    }
    poly.swap(next);
  }
  return poly;
}

[[noreturn]] void manifest_error(std::size_t line, const std::string& what) {
  throw std::runtime_error("manifest line " + std::to_string(line) + ": " + what);
}

}  // namespace

void SceneConfig::validate() const {
  if (tile_extent < 64 || tile_extent > 507) throw ConfigError("scene: tile_extent must lie in [64, 507]");
  if (min_polygons < 1 || max_polygons < min_polygons || max_polygons > kMaxPolygonsPerTile)
    throw ConfigError("scene: polygon range must satisfy 1 <= min <= max <= " + std::to_string(kMaxPolygonsPerTile));
  if (!(low_centered_fraction >= 0 && low_centered_fraction <= 1))
    throw ConfigError("scene: low_centered_fraction must lie in [0, 1]");
  if (trough_width < 1) throw ConfigError("scene: trough_width must be positive");
  if (!(noise_amplitude >= 0)) throw ConfigError("scene: noise_amplitude must be non-negative");
  if (num_classes != 1 && num_classes != 2) throw ConfigError("scene: num_classes must be 1 or 2");
}

std::uint64_t config_hash(const SceneConfig& c) {
  const std::string text = "extent=" + std::to_string(c.tile_extent) + ";polygons=" + std::to_string(c.min_polygons) +
                           "," + std::to_string(c.max_polygons) + ";low=" + format_double(c.low_centered_fraction) +
                           ";trough=" + std::to_string(c.trough_width) + ";noise=" + format_double(c.noise_amplitude) +
                           ";classes=" + std::to_string(c.num_classes);
  return fnv1a(text);
}

BinaryMask trough_mask(const LabelMap& labels, Index r) {
  const Index h = labels.rows(), w = labels.cols();
  std::vector<std::pair<Index, Index>> offsets;
  for (Index dy = -r; dy <= r; ++dy)
    for (Index dx = -r; dx <= r; ++dx)
      if ((dy != 0 || dx != 0) && dy * dy + dx * dx <= r * r) offsets.emplace_back(dy, dx);
  BinaryMask out = BinaryMask::Zero(h, w);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      const auto own = labels(y, x);
      for (const auto& [dy, dx] : offsets) {
        const Index yy = y + dy, xx = x + dx;
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
        if (labels(yy, xx) != own) {
          out(y, x) = 1;
          break;
        }
      }
    }
  return out;
}

AnnotatedTile generate_scene(const SceneConfig& cfg, std::string tile_id) {
  cfg.validate();
  Rng rng(cfg.seed);
  const Index E = cfg.tile_extent, r = cfg.trough_radius();
  const Index count = rng.uniform_int(cfg.min_polygons, cfg.max_polygons);

  // Seeds at least 2r+2 apart keep every seed pixel outside the troughs, so
  // no cell can end up empty. Coincident or crowded draws are redrawn.
  const Index min_d2 = (2 * r + 2) * (2 * r + 2);
  std::vector<Point> pts;
  pts.reserve(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 4000 && !placed; ++attempt) {
      const Point p{rng.uniform_int(0, E - 1), rng.uniform_int(0, E - 1)};
      placed = std::all_of(pts.begin(), pts.end(), [&](const Point& q) {
        return (p.x - q.x) * (p.x - q.x) + (p.y - q.y) * (p.y - q.y) >= min_d2;
      });
      if (placed) pts.push_back(p);
    }
    if (!placed)
      throw ConfigError("scene: cannot place " + std::to_string(count) + " polygons in a " + std::to_string(E) +
                        " pixel tile with trough width " + std::to_string(cfg.trough_width));
  }
  std::vector<char> low(pts.size());
  for (auto& l : low) l = rng.uniform() < cfg.low_centered_fraction;

  LabelMap labels(E, E);
  Eigen::ArrayXXd rel(E, E);  // 0 at the seed, 1 at the cell border
  for (Index y = 0; y < E; ++y)
    for (Index x = 0; x < E; ++x) {
      Index best = -1, second = -1, d1 = 0, d2 = 0;
      for (Index i = 0; i < count; ++i) {
        const auto& p = pts[static_cast<std::size_t>(i)];
        const Index d = (p.x - x) * (p.x - x) + (p.y - y) * (p.y - y);
        if (best < 0 || d < d1) {
          second = best;
          d2 = d1;
          best = i;
          d1 = d;
        } else if (second < 0 || d < d2) {
          second = i;
          d2 = d;
        }
      }
      labels(y, x) = static_cast<std::int32_t>(best);
      double t = 0;
      if (second >= 0) {
        const auto& a = pts[static_cast<std::size_t>(best)];
        const auto& b = pts[static_cast<std::size_t>(second)];
        const double sep = std::hypot(static_cast<double>(a.x - b.x), static_cast<double>(a.y - b.y));
        const double border = static_cast<double>(d2 - d1) / (2 * sep);
        const double dist = std::sqrt(static_cast<double>(d1));
        t = dist + border > 0 ? dist / (dist + border) : 0;
      }
      rel(y, x) = t;
    }
  const BinaryMask trough = trough_mask(labels, r);

  AnnotatedTile tile;
  tile.tile_id = std::move(tile_id);
  tile.seed = cfg.seed;
  tile.config_hash = config_hash(cfg);
  tile.image = Image({3, E, E});
  const double offsets[3] = {0.03, 0.0, -0.03};
  for (Index y = 0; y < E; ++y)
    for (Index x = 0; x < E; ++x) {
      double g;
      if (trough(y, x)) {
        g = 0.18;
      } else {
        const double t = rel(y, x);
        g = low[static_cast<std::size_t>(labels(y, x))] ? 0.42 + 0.30 * t : 0.72 - 0.30 * t;
      }
      g += rng.uniform(-cfg.noise_amplitude, cfg.noise_amplitude);
      for (Index c = 0; c < 3; ++c) {
        const double v = std::clamp(g + offsets[c], 0.0, 1.0);
        tile.image(c, y, x) = static_cast<float>(std::lround(v * 255.0)) / 255.0f;
      }
    }

  tile.instances.resize(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    Instance& inst = tile.instances[i];
    inst.mask = ((labels == static_cast<std::int32_t>(i)) && (trough == 0)).cast<std::uint8_t>();
    if (mask_area(inst.mask) == 0) throw std::logic_error("generate_scene: empty instance mask");
    inst.low_centered = low[i];
    inst.class_id = cfg.num_classes == 2 && !low[i] ? 1 : 0;
    inst.polygon = voronoi_cell(pts, i, static_cast<double>(E));
  }
  return tile;
}

DatasetSplit split_dataset(std::vector<std::string> ids, std::uint64_t seed) {
  const auto n = static_cast<Index>(ids.size());
  if (n < 3) throw ConfigError("split_dataset: needs at least 3 tiles, got " + std::to_string(n));
  Rng rng(seed);
  rng.shuffle(ids.begin(), ids.end());
  const Index held = std::max<Index>(1, std::llround(0.15 * static_cast<double>(n)));
  DatasetSplit s;
  s.train.assign(ids.begin(), ids.end() - 2 * held);
  s.val.assign(ids.end() - 2 * held, ids.end() - held);
  s.test.assign(ids.end() - held, ids.end());
  return s;
}

Index worker_count(Index requested) {
  Index n = requested > 0 ? requested : static_cast<Index>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("SPSEG_THREADS")) {
    Index cap = 0;
    const std::string_view s(env);
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), cap);
    if (ec == std::errc() && cap > 0) n = std::min(n, cap);
  }
  return std::max<Index>(1, n);
}

std::vector<AnnotatedTile> generate_dataset(const DatasetConfig& cfg) {
  cfg.scene.validate();
  if (cfg.tiles < 1) throw ConfigError("generate_dataset: tile count must be positive");
  std::vector<AnnotatedTile> tiles(static_cast<std::size_t>(cfg.tiles));
  std::atomic<Index> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (Index i = next++; i < cfg.tiles; i = next++) {
      try {
        SceneConfig scene = cfg.scene;
        scene.seed = derive_seed(cfg.master_seed, static_cast<std::uint64_t>(i));
        char id[32];
        std::snprintf(id, sizeof id, "tile_%05lld", static_cast<long long>(i));
        tiles[static_cast<std::size_t>(i)] = generate_scene(scene, id);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const Index workers = std::min(worker_count(cfg.threads), cfg.tiles);
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (Index t = 0; t < workers; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return tiles;
}

const AnnotatedTile& Dataset::tile(const std::string& id) const {
  for (const auto& t : tiles)
    if (t.tile_id == id) return t;
  throw std::out_of_range("dataset has no tile '" + id + "'");
}

std::vector<const AnnotatedTile*> Dataset::subset(const std::vector<std::string>& ids) const {
  std::vector<const AnnotatedTile*> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(&tile(id));
  return out;
}

std::string manifest_text(const Dataset& ds) {
  std::string out = "IWPDS1\n";
  out += "master_seed " + std::to_string(ds.master_seed) + "\n";
  out += "config_hash " + hex64(ds.config_hash) + "\n";
  out += "tiles " + std::to_string(ds.tiles.size()) + "\n";
  auto split_line = [&](const char* name, const std::vector<std::string>& ids) {
    out += std::string("split ") + name + " " + std::to_string(ids.size());
    for (const auto& id : ids) out += " " + id;
    out += "\n";
  };
  split_line("train", ds.split.train);
  split_line("val", ds.split.val);
  split_line("test", ds.split.test);
  for (const auto& t : ds.tiles) {
    const Extent2 e = t.extent();
    out += "tile " + t.tile_id + " images/" + t.tile_id + ".ppm " + std::to_string(e.height) + " " +
           std::to_string(e.width) + " " + std::to_string(t.seed) + " " + std::to_string(t.instances.size()) + "\n";
    for (const auto& inst : t.instances) {
      out += "instance " + std::to_string(inst.class_id) + (inst.low_centered ? " low " : " high ") +
             rle_encode(inst.mask) + " " + std::to_string(inst.polygon.size());
      for (const auto& v : inst.polygon) out += " " + format_double(v.x) + " " + format_double(v.y);
      out += "\n";
    }
  }
  return out;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir / "images");
  for (const auto& t : ds.tiles) write_ppm(dir / "images" / (t.tile_id + ".ppm"), t.image);
  std::ofstream out(dir / "manifest.iwp", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.iwp").string());
  out << manifest_text(ds);
}

Dataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.iwp", std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + (dir / "manifest.iwp").string());
  Dataset ds;
  std::string line;
  std::size_t lineno = 0;
  auto next_line = [&]() -> std::istringstream {
    if (!std::getline(in, line)) manifest_error(lineno + 1, "unexpected end of file");
    ++lineno;
    return std::istringstream(line);
  };
  auto expect = [&](std::istringstream& ss, const std::string& key) {
    std::string k;
    if (!(ss >> k) || k != key) manifest_error(lineno, "expected '" + key + "'");
  };
  if (next_line().str() != "IWPDS1") manifest_error(1, "missing IWPDS1 header");
  {
    auto ss = next_line();
    expect(ss, "master_seed");
    if (!(ss >> ds.master_seed)) manifest_error(lineno, "bad master seed");
  }
  {
    auto ss = next_line();
    expect(ss, "config_hash");
    std::string hex;
    ss >> hex;
    auto [p, ec] = std::from_chars(hex.data(), hex.data() + hex.size(), ds.config_hash, 16);
    if (ec != std::errc() || hex.empty()) manifest_error(lineno, "bad config hash");
  }
  std::size_t count = 0;
  {
    auto ss = next_line();
    expect(ss, "tiles");
    if (!(ss >> count)) manifest_error(lineno, "bad tile count");
  }
  for (auto* part : {&ds.split.train, &ds.split.val, &ds.split.test}) {
    auto ss = next_line();
    expect(ss, "split");
    std::string name;
    std::size_t n = 0;
    if (!(ss >> name >> n)) manifest_error(lineno, "bad split line");
    part->resize(n);
    for (auto& id : *part)
      if (!(ss >> id)) manifest_error(lineno, "split lists fewer ids than declared");
  }
  ds.tiles.resize(count);
  for (auto& t : ds.tiles) {
    auto ss = next_line();
    expect(ss, "tile");
    std::string path;
    Index h = 0, w = 0;
    std::size_t n = 0;
    if (!(ss >> t.tile_id >> path >> h >> w >> t.seed >> n)) manifest_error(lineno, "bad tile record");
    t.config_hash = ds.config_hash;
    t.image = read_ppm(dir / path);
    if (t.image.dim(1) != h || t.image.dim(2) != w) manifest_error(lineno, "image extent disagrees with " + path);
    t.instances.resize(n);
    for (auto& inst : t.instances) {
      auto is = next_line();
      expect(is, "instance");
      std::string kind, rle;
      std::size_t nv = 0;
      if (!(is >> inst.class_id >> kind >> rle >> nv)) manifest_error(lineno, "bad instance record");
      inst.low_centered = kind == "low";
      try {
        inst.mask = rle_decode(rle, h, w);
      } catch (const ParseError& e) {
        manifest_error(lineno, e.what());
      }
      inst.polygon.resize(nv);
      for (auto& v : inst.polygon)
        if (!(is >> v.x >> v.y)) manifest_error(lineno, "polygon lists fewer vertices than declared");
    }
  }
  return ds;
}

template <typename Scalar>
InstanceTargets<Scalar> tile_targets(const AnnotatedTile& tile, Index multiple) {
  const Extent2 e = tile.extent();
  const Index H = std::max((e.height + multiple - 1) / multiple * multiple, multiple);
  const Index W = std::max((e.width + multiple - 1) / multiple * multiple, multiple);
  const auto g = static_cast<Index>(tile.instances.size());
  InstanceTargets<Scalar> t{Tensor<Scalar>({g, H, W}), {}};
  for (Index i = 0; i < g; ++i) {
    const auto& inst = tile.instances[static_cast<std::size_t>(i)];
    t.masks.matrix(H, W, i * H * W).topLeftCorner(e.height, e.width) = inst.mask.template cast<Scalar>().matrix();
    t.classes.push_back(inst.class_id);
  }
  return t;
}

template InstanceTargets<float> tile_targets<float>(const AnnotatedTile&, Index);
template InstanceTargets<double> tile_targets<double>(const AnnotatedTile&, Index);

}  // namespace spseg
