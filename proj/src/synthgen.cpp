#include "cola/synthgen.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <numbers>
#include <thread>

#include "cola/error.hpp"
#include "cola/kv_config.hpp"
#include "cola/random.hpp"

namespace cola {

namespace fs = std::filesystem;

namespace {

struct ArchetypeInfo {
  std::string_view name;
  std::uint16_t coarse_ten;
  double intensity;
};

constexpr std::array<ArchetypeInfo, kArchetypeCount> kArchetypes{{
    {"road", 1, 0.15},
    {"sidewalk", 2, 0.30},
    {"terrain", 6, 0.35},
    {"building", 3, 0.45},
    {"fence", 3, 0.50},
    {"car", 4, 0.70},
    {"truck", 4, 0.60},
    {"bicycle", 5, 0.55},
    {"pedestrian", 7, 0.25},
    {"rider", 7, 0.30},
    {"pole", 9, 0.65},
    {"traffic_sign", 10, 0.95},
    {"trunk", 6, 0.40},
    {"vegetation", 6, 0.55},
    {"trashcan", 8, 0.50},
    {"cone", 10, 0.85},
    {"stroller", 8, 0.45},
}};

const ArchetypeInfo& info(Archetype a) { return kArchetypes[static_cast<std::size_t>(a)]; }

constexpr double kEps = 1e-9;
constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

std::string_view archetype_name(Archetype a) { return info(a).name; }

std::optional<Archetype> parse_archetype(std::string_view name) {
  for (std::size_t i = 0; i < kArchetypeCount; ++i) {
    if (kArchetypes[i].name == name) return static_cast<Archetype>(i);
  }
  return std::nullopt;
}

std::uint16_t archetype_coarse_ten(Archetype a) { return info(a).coarse_ten; }

std::vector<Archetype> emitted_archetypes(Archetype a) {
  switch (a) {
    case Archetype::Rider: return {Archetype::Rider, Archetype::Bicycle};
    case Archetype::TrafficSign: return {Archetype::TrafficSign, Archetype::Pole};
    case Archetype::Trunk: return {Archetype::Trunk, Archetype::Vegetation};
    default: return {a};
  }
}

void SensorModel::validate() const {
  if (n_beams < 1) throw Error(ErrorCode::InvalidConfig, "n_beams must be at least 1");
  if (!(max_range > 0.0)) throw Error(ErrorCode::InvalidConfig, "max_range must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw Error(ErrorCode::InvalidConfig, "dropout_rate must be in [0, 1)");
  if (!(azimuth_resolution_deg > 0.0 && azimuth_resolution_deg <= 360.0)) {
    throw Error(ErrorCode::InvalidConfig, "azimuth_resolution must be in (0, 360]");
  }
  if (!(vfov_min_deg < vfov_max_deg) || vfov_min_deg < -90.0 || vfov_max_deg > 90.0) {
    throw Error(ErrorCode::InvalidConfig, "vertical_fov must satisfy -90 <= min < max <= 90");
  }
  if (!(height > 0.0)) throw Error(ErrorCode::InvalidConfig, "sensor height must be positive");
  if (range_noise < 0.0 || intensity_noise < 0.0) throw Error(ErrorCode::InvalidConfig, "noise must be non-negative");
}

double SensorModel::beam_fraction(std::size_t b) const {
  return static_cast<double>(b) / static_cast<double>(n_beams);
}

std::size_t SensorModel::azimuth_steps() const {
  return static_cast<std::size_t>(std::floor(360.0 / azimuth_resolution_deg + 1e-9));
}

SceneConfig::SceneConfig() {
  for (std::size_t i = 0; i < kArchetypeCount; ++i) fine_label[i] = static_cast<std::uint16_t>(i + 1);
}

void SceneConfig::validate() const {
  sensor.validate();
  if (!(extent > 0.0)) throw Error(ErrorCode::InvalidConfig, "extent must be positive");
  if (!(road_half_width > 0.0) || sidewalk_width < 0.0 || sidewalk_height < 0.0) {
    throw Error(ErrorCode::InvalidConfig, "road and sidewalk dimensions must be non-negative");
  }
  if (!(building_setback > road_half_width + sidewalk_width) || !(building_setback < extent)) {
    throw Error(ErrorCode::InvalidConfig, "building_setback must lie between the sidewalk and extent");
  }
  for (std::size_t i = 0; i < kArchetypeCount; ++i) {
    if (counts[i] < 0) {
      throw Error(ErrorCode::InvalidConfig, "negative count for " + std::string(kArchetypes[i].name));
    }
  }
  if (count(Archetype::Road) > 1) throw Error(ErrorCode::InvalidConfig, "at most one road strip");
  if (count(Archetype::Sidewalk) > 2) throw Error(ErrorCode::InvalidConfig, "at most two sidewalk strips");
  if (count(Archetype::Terrain) > 1) throw Error(ErrorCode::InvalidConfig, "terrain count is 0 or 1");
}

namespace {

struct Rect {
  double x0, x1, y0, y1;

  bool overlaps(const Rect& o, double margin) const {
    return x0 - margin < o.x1 && o.x0 - margin < x1 && y0 - margin < o.y1 && o.y0 - margin < y1;
  }
};

enum class Zone { Lane, Curb, Walk, Verge, Building };

class Placer {
 public:
  Placer(const SceneConfig& cfg, std::uint64_t seed, double path_length)
      : cfg_(cfg), rng_(seed), x_lo_(-cfg.extent), x_hi_(cfg.extent + path_length) {}

  SceneLayout run() {
    SceneLayout layout;
    layout.config = cfg_;
    const int walks = cfg_.count(Archetype::Sidewalk);
    if (walks > 0) {
      // +y side first, then -y.
      for (int s = 0; s < walks; ++s) {
        const double sign = s == 0 ? 1.0 : -1.0;
        const double y_in = sign * cfg_.road_half_width;
        const double y_out = sign * (cfg_.road_half_width + cfg_.sidewalk_width);
        Primitive p;
        p.kind = PrimitiveKind::Box;
        p.archetype = Archetype::Sidewalk;
        p.a = {x_lo_ - 2.0 * cfg_.extent, std::min(y_in, y_out), 0.0};
        p.b = {x_hi_ + 2.0 * cfg_.extent, std::max(y_in, y_out), cfg_.sidewalk_height};
        layout.primitives.push_back(p);
      }
    }
    // Large footprints first so small objects fill the gaps.
    constexpr std::array order{Archetype::Building, Archetype::Fence,      Archetype::Truck,    Archetype::Car,
                               Archetype::Trunk,    Archetype::Vegetation, Archetype::Bicycle,  Archetype::Rider,
                               Archetype::Pedestrian, Archetype::Pole,     Archetype::TrafficSign,
                               Archetype::Trashcan, Archetype::Cone,       Archetype::Stroller};
    for (Archetype a : order) {
      for (int i = 0; i < cfg_.count(a); ++i) place(a, layout);
    }
    return layout;
  }

 private:
  bool has_walk(double sign) const {
    const int walks = cfg_.count(Archetype::Sidewalk);
    return sign > 0 ? walks >= 1 : walks >= 2;
  }

  double walk_outer() const { return cfg_.road_half_width + cfg_.sidewalk_width; }

  // Lateral distance range (from the path) for the centre of an object of half-width hw.
  std::pair<double, double> band(Zone zone, double sign, double hw) const {
    const double rhw = cfg_.road_half_width;
    const bool road = cfg_.count(Archetype::Road) > 0;
    switch (zone) {
      case Zone::Lane:
        if (road) return {1.6 + hw, rhw - 0.2 - hw};
        return {rhw + 0.5 + hw, cfg_.building_setback - 0.5 - hw};
      case Zone::Curb:
        if (road) return {rhw - 1.4 + hw, rhw - 0.2 - hw};
        return {rhw + 0.3 + hw, rhw + 3.0 - hw};
      case Zone::Walk:
        if (has_walk(sign)) return {rhw + 0.2 + hw, walk_outer() - 0.2 - hw};
        return {rhw + 0.3 + hw, rhw + 3.0 - hw};
      case Zone::Verge: {
        const double inner = has_walk(sign) ? walk_outer() : rhw;
        return {inner + 0.3 + hw, cfg_.building_setback - 0.3 - hw};
      }
      case Zone::Building:
        return {cfg_.building_setback + hw, cfg_.extent - hw};
    }
    return {0.0, 0.0};
  }

  double ground_z(double y) const {
    const double d = std::abs(y);
    if (d >= cfg_.road_half_width && d <= walk_outer() && has_walk(y >= 0 ? 1.0 : -1.0)) return cfg_.sidewalk_height;
    return 0.0;
  }

  double jitter(double v, double frac = 0.15) { return v * rng_.uniform(1.0 - frac, 1.0 + frac); }

  // Picks a free footprint of half extents (hx, hy) in the zone.
  std::optional<std::pair<double, double>> spot(Zone zone, double hx, double hy) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      const double sign = rng_.bernoulli(0.5) ? 1.0 : -1.0;
      const auto [lo, hi] = band(zone, sign, hy);
      if (hi < lo) continue;
      const double y = sign * rng_.uniform(lo, hi);
      const double x = rng_.uniform(x_lo_ + hx, x_hi_ - hx);
      const Rect r{x - hx, x + hx, y - hy, y + hy};
      if (std::none_of(taken_.begin(), taken_.end(), [&](const Rect& t) { return t.overlaps(r, 0.3); })) {
        taken_.push_back(r);
        return std::pair{x, y};
      }
    }
    return std::nullopt;
  }

  void add_box(SceneLayout& l, Archetype a, double cx, double cy, double hx, double hy, double z0, double z1) {
    Primitive p;
    p.kind = PrimitiveKind::Box;
    p.archetype = a;
    p.instance = instance_;
    p.a = {cx - hx, cy - hy, z0};
    p.b = {cx + hx, cy + hy, z1};
    l.primitives.push_back(p);
  }

  void add_cylinder(SceneLayout& l, Archetype a, double cx, double cy, double r, double z0, double z1) {
    Primitive p;
    p.kind = PrimitiveKind::Cylinder;
    p.archetype = a;
    p.instance = instance_;
    p.a = {cx, cy, z0};
    p.b = {r, 0.0, z1};
    l.primitives.push_back(p);
  }

  void add_ellipsoid(SceneLayout& l, Archetype a, Eigen::Vector3d c, Eigen::Vector3d r) {
    Primitive p;
    p.kind = PrimitiveKind::Ellipsoid;
    p.archetype = a;
    p.instance = instance_;
    p.a = c;
    p.b = r;
    l.primitives.push_back(p);
  }

  void place(Archetype a, SceneLayout& l) {
    double hx = 0.0, hy = 0.0;
    Zone zone = Zone::Verge;
    switch (a) {
      case Archetype::Building: hx = rng_.uniform(4.0, 10.0), hy = rng_.uniform(2.0, 4.0), zone = Zone::Building; break;
      case Archetype::Fence: hx = rng_.uniform(3.0, 6.0), hy = 0.06, zone = Zone::Verge; break;
      case Archetype::Truck: hx = jitter(3.8), hy = jitter(1.2, 0.05), zone = Zone::Lane; break;
      case Archetype::Car: hx = jitter(2.1), hy = jitter(0.9, 0.08), zone = Zone::Lane; break;
      case Archetype::Trunk: hx = hy = 1.8, zone = Zone::Verge; break;
      case Archetype::Vegetation: hx = hy = jitter(1.0, 0.3), zone = Zone::Verge; break;
      case Archetype::Bicycle:
      case Archetype::Rider: hx = jitter(0.85, 0.1), hy = 0.25, zone = Zone::Curb; break;
      case Archetype::Pedestrian: hx = hy = 0.35, zone = Zone::Walk; break;
      case Archetype::Pole: hx = hy = 0.1, zone = Zone::Walk; break;
      case Archetype::TrafficSign: hx = hy = 0.4, zone = Zone::Walk; break;
      case Archetype::Trashcan: hx = hy = 0.3, zone = Zone::Walk; break;
      case Archetype::Cone: hx = hy = 0.18, zone = Zone::Curb; break;
      case Archetype::Stroller: hx = 0.45, hy = 0.3, zone = Zone::Walk; break;
      default: return;
    }
    const auto where = spot(zone, hx, hy);
    if (!where) {
      throw Error(ErrorCode::PlacementFailure,
                  "no free spot for " + std::string(archetype_name(a)) + " within extent " + std::to_string(cfg_.extent));
    }
    const auto [x, y] = *where;
    const double z = ground_z(y);
    ++instance_;
    switch (a) {
      case Archetype::Building: add_box(l, a, x, y, hx, hy, 0.0, rng_.uniform(5.0, 12.0)); break;
      case Archetype::Fence: add_box(l, a, x, y, hx, hy, 0.0, jitter(1.3, 0.2)); break;
      case Archetype::Truck: add_box(l, a, x, y, hx, hy, 0.0, jitter(3.2, 0.1)); break;
      case Archetype::Car: add_box(l, a, x, y, hx, hy, 0.0, jitter(1.5, 0.1)); break;
      case Archetype::Trunk: {
        const double h = jitter(2.5);
        add_cylinder(l, Archetype::Trunk, x, y, jitter(0.2), 0.0, h);
        const double r = jitter(1.6);
        add_ellipsoid(l, Archetype::Vegetation, {x, y, h + 0.8 * r}, {r, r, jitter(1.3)});
        break;
      }
      case Archetype::Vegetation: add_ellipsoid(l, a, {x, y, 0.1}, {hx, hx, jitter(0.7, 0.3)}); break;
      case Archetype::Bicycle: add_box(l, a, x, y, hx, 0.2, z, z + jitter(1.0, 0.1)); break;
      case Archetype::Rider: {
        const double bike_top = z + jitter(1.0, 0.1);
        add_box(l, Archetype::Bicycle, x, y, hx, 0.2, z, bike_top);
        add_ellipsoid(l, Archetype::Rider, {x, y, bike_top + 0.45}, {0.3, 0.25, 0.55});
        break;
      }
      case Archetype::Pedestrian: {
        const double half = jitter(0.85, 0.1);
        add_ellipsoid(l, a, {x, y, z + half}, {0.3, 0.25, half});
        break;
      }
      case Archetype::Pole: add_cylinder(l, a, x, y, 0.08, z, z + jitter(5.0, 0.2)); break;
      case Archetype::TrafficSign: {
        const double h = jitter(2.2, 0.1);
        add_cylinder(l, Archetype::Pole, x, y, 0.05, z, z + h);
        add_box(l, Archetype::TrafficSign, x, y, 0.04, 0.35, z + h, z + h + 0.7);
        break;
      }
      case Archetype::Trashcan: add_cylinder(l, a, x, y, jitter(0.28, 0.1), z, z + jitter(1.0, 0.1)); break;
      case Archetype::Cone: add_cylinder(l, a, x, y, 0.14, z, z + 0.7); break;
      case Archetype::Stroller: add_box(l, a, x, y, hx, hy, z, z + jitter(1.0, 0.1)); break;
      default: break;
    }
  }

  const SceneConfig& cfg_;
  Rng rng_;
  double x_lo_, x_hi_;
  std::vector<Rect> taken_;
  std::uint16_t instance_ = 0;
};

// Ray hits return the distance along a unit direction, or kInf.

double hit_box(const Eigen::Vector3d& o, const Eigen::Vector3d& d, const Eigen::Vector3d& lo,
               const Eigen::Vector3d& hi) {
  double t0 = -kInf, t1 = kInf;
  for (int i = 0; i < 3; ++i) {
    if (std::abs(d[i]) < 1e-15) {
      if (o[i] < lo[i] || o[i] > hi[i]) return kInf;
      continue;
    }
    double a = (lo[i] - o[i]) / d[i];
    double b = (hi[i] - o[i]) / d[i];
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
    if (t0 > t1) return kInf;
  }
  if (t0 > kEps) return t0;
  return kInf;  // origin inside or box behind
}

double hit_cylinder(const Eigen::Vector3d& o, const Eigen::Vector3d& d, const Primitive& p) {
  const double cx = p.a.x(), cy = p.a.y(), z0 = p.a.z(), r = p.b.x(), z1 = p.b.z();
  double best = kInf;
  const double ox = o.x() - cx, oy = o.y() - cy;
  const double a = d.x() * d.x() + d.y() * d.y();
  if (a > 1e-15) {
    const double b = 2.0 * (ox * d.x() + oy * d.y());
    const double c = ox * ox + oy * oy - r * r;
    const double disc = b * b - 4.0 * a * c;
    if (disc >= 0.0) {
      const double sq = std::sqrt(disc);
      for (double t : {(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)}) {
        if (t <= kEps) continue;
        const double z = o.z() + t * d.z();
        if (z >= z0 && z <= z1) {
          best = std::min(best, t);
          break;
        }
      }
    }
  }
  if (std::abs(d.z()) > 1e-15) {
    for (double zc : {z0, z1}) {
      const double t = (zc - o.z()) / d.z();
      if (t <= kEps || t >= best) continue;
      const double px = ox + t * d.x(), py = oy + t * d.y();
      if (px * px + py * py <= r * r) best = t;
    }
  }
  return best;
}

double hit_ellipsoid(const Eigen::Vector3d& o, const Eigen::Vector3d& d, const Primitive& p) {
  const Eigen::Vector3d oc = (o - p.a).cwiseQuotient(p.b);
  const Eigen::Vector3d ds = d.cwiseQuotient(p.b);
  const double a = ds.squaredNorm();
  const double b = 2.0 * oc.dot(ds);
  const double c = oc.squaredNorm() - 1.0;
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) return kInf;
  const double sq = std::sqrt(disc);
  const double t0 = (-b - sq) / (2.0 * a);
  if (t0 > kEps) return t0;
  const double t1 = (-b + sq) / (2.0 * a);
  return t1 > kEps ? t1 : kInf;
}

// Horizontal bounding circle for early rejection.
struct Bound {
  double cx, cy, r;
};

Bound bound_of(const Primitive& p) {
  switch (p.kind) {
    case PrimitiveKind::Box: {
      const double hx = 0.5 * (p.b.x() - p.a.x()), hy = 0.5 * (p.b.y() - p.a.y());
      return {0.5 * (p.a.x() + p.b.x()), 0.5 * (p.a.y() + p.b.y()), std::hypot(hx, hy)};
    }
    case PrimitiveKind::Cylinder: return {p.a.x(), p.a.y(), p.b.x()};
    case PrimitiveKind::Ellipsoid: return {p.a.x(), p.a.y(), std::max(p.b.x(), p.b.y())};
  }
  return {0.0, 0.0, kInf};
}

std::uint64_t double_bits(double v) {
  std::uint64_t bits;
  static_assert(sizeof bits == sizeof v);
  std::memcpy(&bits, &v, sizeof bits);
  return bits;
}

}  // namespace

SceneLayout place_scene(const SceneConfig& cfg, std::uint64_t seed, double path_length) {
  cfg.validate();
  return Placer(cfg, seed, path_length).run();
}

SceneSample sample_scan(const SceneLayout& layout, double sensor_x, std::uint64_t seed) {
  const SceneConfig& cfg = layout.config;
  const SensorModel& s = cfg.sensor;
  s.validate();
  const Eigen::Vector3d origin(sensor_x, 0.0, s.height);

  std::vector<Bound> bounds;
  bounds.reserve(layout.primitives.size());
  for (const auto& p : layout.primitives) bounds.push_back(bound_of(p));

  const bool road = cfg.count(Archetype::Road) > 0;
  const double deg = std::numbers::pi / 180.0;
  const std::size_t steps = s.azimuth_steps();

  SceneSample out;
  for (std::size_t b = 0; b < s.n_beams; ++b) {
    const double frac = s.beam_fraction(b);
    const double elev = (s.vfov_min_deg + (s.vfov_max_deg - s.vfov_min_deg) * frac) * deg;
    const std::uint64_t beam_key = double_bits(frac);
    for (std::size_t k = 0; k < steps; ++k) {
      const double az = static_cast<double>(k) * s.azimuth_resolution_deg * deg;
      const Eigen::Vector3d d(std::cos(elev) * std::cos(az), std::cos(elev) * std::sin(az), std::sin(elev));
      const double hx = std::cos(az), hy = std::sin(az);

      double best = kInf;
      Archetype arch = Archetype::Terrain;
      std::uint16_t instance = 0;
      if (d.z() < -1e-12) {
        best = -origin.z() / d.z();
        const double y = origin.y() + best * d.y();
        arch = road && std::abs(y) < cfg.road_half_width ? Archetype::Road : Archetype::Terrain;
      }
      for (std::size_t i = 0; i < layout.primitives.size(); ++i) {
        const Bound& bd = bounds[i];
        const double rx = bd.cx - origin.x(), ry = bd.cy - origin.y();
        if (std::abs(rx * hy - ry * hx) > bd.r || rx * hx + ry * hy < -bd.r) continue;
        const Primitive& p = layout.primitives[i];
        double t = kInf;
        switch (p.kind) {
          case PrimitiveKind::Box: t = hit_box(origin, d, p.a, p.b); break;
          case PrimitiveKind::Cylinder: t = hit_cylinder(origin, d, p); break;
          case PrimitiveKind::Ellipsoid: t = hit_ellipsoid(origin, d, p); break;
        }
        if (t < best) {
          best = t;
          arch = p.archetype;
          instance = p.instance;
        }
      }
      if (!(best <= s.max_range)) continue;

      Rng ray(derive_seed(seed, beam_key, k));
      if (ray.uniform() < s.dropout_rate) continue;
      const double range = best + s.range_noise * ray.normal();
      if (!(range > 0.0) || range > s.max_range) continue;
      const double attenuation = 1.0 - 0.3 * range / s.max_range;
      const double intensity = std::clamp(info(arch).intensity * attenuation + s.intensity_noise * ray.normal(), 0.0, 1.0);

      Point pt{static_cast<float>(range * d.x()), static_cast<float>(range * d.y()), static_cast<float>(range * d.z()),
               static_cast<float>(intensity)};
      const double norm = std::sqrt(static_cast<double>(pt.x) * pt.x + static_cast<double>(pt.y) * pt.y +
                                    static_cast<double>(pt.z) * pt.z);
      if (norm > s.max_range) continue;
      out.scan.points.push_back(pt);
      out.labels.semantic.push_back(cfg.label(arch));
      out.labels.instance.push_back(instance);
      out.archetypes.push_back(arch);
    }
  }
  return out;
}

SceneSample generate_scene(const SceneConfig& cfg, std::uint64_t seed) {
  const SceneLayout layout = place_scene(cfg, derive_seed(seed, "layout"));
  return sample_scan(layout, 0.0, derive_seed(seed, "scan"));
}

const DatasetSpec& CorpusConfig::dataset(std::string_view name) const {
  for (const auto& d : datasets) {
    if (d.name == name) return d;
  }
  throw Error(ErrorCode::InvalidConfig, "no dataset named '" + std::string(name) + "'");
}

namespace {

std::vector<double> parse_pair(const KvSection& sec, const std::string& key, std::vector<double> fallback) {
  if (!sec.has(key)) return fallback;
  std::vector<double> out;
  for (const auto& item : sec.get_list(key)) {
    const auto v = parse_double(item);
    if (!v) throw Error(ErrorCode::ParseError, key + ": '" + item + "' is not a number");
    out.push_back(*v);
  }
  if (out.size() != 2) throw Error(ErrorCode::ParseError, key + " needs two values");
  return out;
}

std::size_t positive_count(const KvSection& sec, const std::string& key, std::int64_t fallback) {
  const auto v = sec.get_int_or(key, fallback);
  if (v < 1) throw Error(ErrorCode::InvalidConfig, sec.name + ": " + key + " must be at least 1");
  return static_cast<std::size_t>(v);
}

DatasetSpec parse_dataset(const KvSection& sec) {
  DatasetSpec ds;
  ds.name = sec.name;
  if (ds.name.empty()) throw Error(ErrorCode::ParseError, "dataset section without a name");
  ds.n_scenes = positive_count(sec, "scenes", 1);
  ds.scans_per_scene = positive_count(sec, "scans_per_scene", 1);
  ds.scan_spacing = sec.get_double_or("scan_spacing", ds.scan_spacing);

  SceneConfig& sc = ds.scene;
  sc.extent = sec.get_double_or("extent", sc.extent);
  sc.road_half_width = sec.get_double_or("road_half_width", sc.road_half_width);
  sc.sidewalk_width = sec.get_double_or("sidewalk_width", sc.sidewalk_width);
  sc.sidewalk_height = sec.get_double_or("sidewalk_height", sc.sidewalk_height);
  sc.building_setback = sec.get_double_or("building_setback", sc.building_setback);

  SensorModel& sm = sc.sensor;
  const auto beams = sec.get_int_or("sensor.beams", static_cast<std::int64_t>(sm.n_beams));
  if (beams < 1) throw Error(ErrorCode::InvalidConfig, ds.name + ": sensor.beams must be at least 1");
  sm.n_beams = static_cast<std::size_t>(beams);
  sm.azimuth_resolution_deg = sec.get_double_or("sensor.azimuth_resolution", sm.azimuth_resolution_deg);
  const auto fov = parse_pair(sec, "sensor.vertical_fov", {sm.vfov_min_deg, sm.vfov_max_deg});
  sm.vfov_min_deg = fov[0];
  sm.vfov_max_deg = fov[1];
  sm.max_range = sec.get_double_or("sensor.max_range", sm.max_range);
  sm.dropout_rate = sec.get_double_or("sensor.dropout", sm.dropout_rate);
  sm.height = sec.get_double_or("sensor.height", sm.height);
  sm.range_noise = sec.get_double_or("sensor.range_noise", sm.range_noise);
  sm.intensity_noise = sec.get_double_or("sensor.intensity_noise", sm.intensity_noise);

  ds.vocabulary[kIgnoreLabel] = sec.get_or("ignore_name", "unlabeled");
  std::array<bool, kArchetypeCount> labelled{};
  for (const auto& [key, value] : sec.entries) {
    if (key.starts_with("count.")) {
      const auto a = parse_archetype(key.substr(6));
      if (!a) throw Error(ErrorCode::ParseError, ds.name + ": unknown archetype in '" + key + "'");
      const auto n = parse_int(value);
      if (!n || *n < 0) throw Error(ErrorCode::InvalidConfig, ds.name + ": " + key + " must be a non-negative integer");
      sc.count(*a) = static_cast<int>(*n);
    } else if (key.starts_with("label.")) {
      const auto a = parse_archetype(key.substr(6));
      if (!a) throw Error(ErrorCode::ParseError, ds.name + ": unknown archetype in '" + key + "'");
      const auto colon = value.find(':');
      const auto id = parse_int(trim(value.substr(0, colon)));
      if (colon == std::string::npos || !id || *id < 0 || *id > 0xFFFF) {
        throw Error(ErrorCode::ParseError, ds.name + ": " + key + " must be '<id>:<name>'");
      }
      const std::string name = trim(value.substr(colon + 1));
      const auto fine = static_cast<std::uint16_t>(*id);
      const auto [it, inserted] = ds.vocabulary.emplace(fine, name);
      if (!inserted && it->second != name) {
        throw Error(ErrorCode::DuplicateFineId, ds.name + ": id " + std::to_string(fine) + " names both '" +
                                                    it->second + "' and '" + name + "'");
      }
      sc.label(*a) = fine;
      labelled[static_cast<std::size_t>(*a)] = true;
    }
  }
  // Every archetype that can produce points needs a label.
  std::array<bool, kArchetypeCount> needed{};
  needed[static_cast<std::size_t>(Archetype::Terrain)] = true;
  for (std::size_t i = 0; i < kArchetypeCount; ++i) {
    if (sc.counts[i] == 0) continue;
    for (Archetype e : emitted_archetypes(static_cast<Archetype>(i))) needed[static_cast<std::size_t>(e)] = true;
  }
  for (std::size_t i = 0; i < kArchetypeCount; ++i) {
    if (needed[i] && !labelled[i]) {
      throw Error(ErrorCode::InvalidConfig, ds.name + ": no label for archetype '" + std::string(kArchetypes[i].name) + "'");
    }
  }
  sc.validate();
  return ds;
}

std::string zero_pad(std::size_t v, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%0*zu", width, v);
  return buf;
}

}  // namespace

CorpusConfig parse_corpus_config(std::string_view text) {
  const KvDocument doc = parse_kv(text);
  CorpusConfig cfg;
  for (const KvSection* sec : doc.of_kind("dataset")) {
    for (const auto& d : cfg.datasets) {
      if (d.name == sec->name) throw Error(ErrorCode::ParseError, "dataset '" + sec->name + "' declared twice");
    }
    cfg.datasets.push_back(parse_dataset(*sec));
  }
  if (cfg.datasets.empty()) throw Error(ErrorCode::InvalidConfig, "corpus config declares no dataset");
  return cfg;
}

std::vector<DatasetIndex> generate_corpus(const CorpusConfig& cfg, std::uint64_t seed, const fs::path& out_dir,
                                          std::size_t jobs) {
  struct Job {
    const DatasetSpec* ds;
    fs::path root;
    std::string scene_id;
  };
  std::vector<Job> work;
  for (const auto& ds : cfg.datasets) {
    const fs::path root = out_dir / ds.name;
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + root.string() + ": " + ec.message());
    write_text_file(root / "vocabulary.csv", format_vocabulary(ds.vocabulary));
    for (std::size_t s = 0; s < ds.n_scenes; ++s) work.push_back({&ds, root, "scene_" + zero_pad(s, 4)});
  }

  auto run_scene = [&](const Job& job) {
    const DatasetSpec& ds = *job.ds;
    const double path = ds.scan_spacing * static_cast<double>(ds.scans_per_scene - 1);
    const SceneLayout layout = place_scene(ds.scene, derive_seed(seed, ds.name, job.scene_id, "layout"), path);
    const fs::path scene_dir = job.root / job.scene_id;
    std::error_code ec;
    fs::create_directories(scene_dir / "velodyne", ec);
    fs::create_directories(scene_dir / "labels", ec);
    if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + scene_dir.string() + ": " + ec.message());
    for (std::size_t k = 0; k < ds.scans_per_scene; ++k) {
      const SceneSample sample = sample_scan(layout, ds.scan_spacing * static_cast<double>(k),
                                             derive_seed(seed, ds.name, job.scene_id, k));
      const std::string scan_id = zero_pad(k, 6);
      write_file(scene_dir / "velodyne" / (scan_id + ".bin"), write_point_scan(sample.scan));
      write_file(scene_dir / "labels" / (scan_id + ".label"), write_label_file(sample.labels));
    }
  };

  jobs = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(work.size(), 1));
  if (jobs == 1) {
    for (const auto& job : work) run_scene(job);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> failures(jobs);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < jobs; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = next++; i < work.size(); i = next++) run_scene(work[i]);
        } catch (...) {
          failures[w] = std::current_exception();
          next = work.size();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (const auto& f : failures) {
      if (f) std::rethrow_exception(f);
    }
  }

  std::vector<DatasetIndex> indices;
  for (const auto& ds : cfg.datasets) {
    const fs::path root = out_dir / ds.name;
    DatasetIndex index;
    index.dataset_name = ds.name;
    index.fine_vocabulary = ds.vocabulary;
    for (std::size_t s = 0; s < ds.n_scenes; ++s) {
      Scene scene;
      scene.scene_id = "scene_" + zero_pad(s, 4);
      for (std::size_t k = 0; k < ds.scans_per_scene; ++k) {
        const std::string scan_id = zero_pad(k, 6);
        scene.scans.push_back({scan_id, root / scene.scene_id / "velodyne" / (scan_id + ".bin"),
                               root / scene.scene_id / "labels" / (scan_id + ".label")});
      }
      index.scenes.push_back(std::move(scene));
    }
    write_text_file(root / "manifest.tsv", format_manifest(index, root));
    indices.push_back(std::move(index));
  }
  return indices;
}

}  // namespace cola
