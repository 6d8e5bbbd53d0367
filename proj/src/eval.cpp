#include "avsim/eval.hpp"

#include "json.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace avsim::eval {

namespace {

constexpr double kRadToDeg = 180.0 / std::numbers::pi;
constexpr double kRayEps = 1e-9;

double angle_between(const Vec3& a, const Vec3& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b)) * kRadToDeg;
}

// Direction minimizing the summed angle to the others (rotation invariant).
Vec3 medoid(const std::vector<Vec3>& dirs) {
  std::size_t best = 0;
  double best_cost = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < dirs.size(); ++i) {
    double cost = 0.0;
    for (const auto& d : dirs) cost += angle_between(dirs[i], d);
    if (cost < best_cost) {
      best_cost = cost;
      best = i;
    }
  }
  return dirs[best];
}

double floor_abs(double v) { return std::max(std::abs(v), kRelativeFloor); }

}  // namespace

// ---- turning ----

TurningReport turning_frames(std::span<const Vec3> roots, const TurningOptions& options) {
  if (roots.size() < 3) fail(ErrorCode::InvalidArgument, "turning analysis needs >= 3 frames");
  if (options.steady_window < 1 || !(options.angle_tolerance_deg > 0.0)) {
    fail(ErrorCode::InvalidArgument, "bad turning options");
  }
  const std::size_t n = roots.size();
  std::vector<Vec3> disp(n, Vec3::Zero());
  double max_speed = 0.0;
  for (std::size_t k = 1; k < n; ++k) {
    disp[k] = roots[k] - roots[k - 1];
    max_speed = std::max(max_speed, disp[k].norm());
  }
  const double ref = options.reference_speed > 0.0 ? options.reference_speed : max_speed;
  const double threshold = options.speed_fraction * ref;
  std::vector<char> moving(n, 0);
  std::vector<Vec3> dir(n, Vec3::Zero());
  std::size_t moving_count = 0;
  for (std::size_t k = 1; k < n; ++k) {
    if (ref > 0.0 && disp[k].norm() > threshold) {
      moving[k] = 1;
      dir[k] = disp[k].normalized();
      ++moving_count;
    }
  }
  if (moving_count < 3) fail(ErrorCode::InvalidArgument, "fewer than 3 moving frames");

  const double tol = options.angle_tolerance_deg;
  const auto window = static_cast<std::size_t>(options.steady_window);
  TurningReport report;

  // True when frames j .. j+window-1 all move and agree with dir[j].
  auto steady_from = [&](std::size_t j) {
    if (j + window > n) return false;
    for (std::size_t i = j; i < j + window; ++i) {
      if (!moving[i] || angle_between(dir[i], dir[j]) > tol) return false;
    }
    return true;
  };

  std::size_t k = 1;
  while (k < n) {
    if (!moving[k]) {
      ++k;
      continue;
    }
    // Walk one moving segment, tracking the trailing steady direction.
    std::vector<Vec3> trail = {dir[k]};
    std::size_t last_steady = k;
    ++k;
    while (k < n && moving[k]) {
      const Vec3 steady = medoid(trail);
      if (angle_between(dir[k], steady) <= tol) {
        trail.push_back(dir[k]);
        if (trail.size() > window) trail.erase(trail.begin());
        last_steady = k;
        ++k;
        continue;
      }
      // Turn in progress: find the first frame that starts a new steady run.
      std::size_t j = k;
      bool broken = false;
      while (j < n && !steady_from(j)) {
        if (!moving[j]) {
          broken = true;
          break;
        }
        ++j;
      }
      if (broken || j >= n) {
        k = j;
        break;
      }
      const double angle = angle_between(steady, dir[j]);
      if (angle > tol) {
        report.events.push_back({last_steady, j, angle, j - last_steady});
      }
      trail = {dir[j]};
      last_steady = j;
      k = j + 1;
    }
  }

  double sum180 = 0.0, sum90 = 0.0;
  for (const auto& e : report.events) {
    if (e.angle_degrees > 135.0) {
      sum180 += double(e.frame_count);
      ++report.count_180;
    } else if (e.angle_degrees >= 45.0) {
      sum90 += double(e.frame_count);
      ++report.count_90;
    }
  }
  if (report.count_180) report.mean_180 = sum180 / double(report.count_180);
  if (report.count_90) report.mean_90 = sum90 / double(report.count_90);
  return report;
}

// ---- ray casting ----

RayCastOracle::RayCastOracle(std::shared_ptr<const ingest::ReferenceMesh> reference,
                             const std::array<posmap::ViewCamera, 6>& cameras)
    : reference_(std::move(reference)), cameras_(cameras) {
  if (!reference_) fail(ErrorCode::InvalidArgument, "null reference");
  const auto& ref = *reference_;
  for (int k = 0; k < 6; ++k) {
    const auto& cam = cameras_[k];
    auto& g = grids_[k];
    std::vector<Vec2> p(ref.vertices.size());
    Vec2 lo = Vec2::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
    for (std::size_t v = 0; v < p.size(); ++v) {
      p[v] = {cam.right.dot(ref.vertices[v]), cam.up.dot(ref.vertices[v])};
      lo = lo.cwiseMin(p[v]);
      hi = hi.cwiseMax(p[v]);
    }
    g.cell = 2.0 * cam.pixel_size;
    g.origin = lo - Vec2::Constant(g.cell);
    g.nx = static_cast<int>(std::ceil((hi.x() - g.origin.x()) / g.cell)) + 2;
    g.ny = static_cast<int>(std::ceil((hi.y() - g.origin.y()) / g.cell)) + 2;
    g.cells.assign(static_cast<std::size_t>(g.nx) * g.ny, {});
    for (std::uint32_t f = 0; f < ref.faces.size(); ++f) {
      const auto& tri = ref.faces[f];
      Vec2 flo = p[tri[0]].cwiseMin(p[tri[1]]).cwiseMin(p[tri[2]]);
      Vec2 fhi = p[tri[0]].cwiseMax(p[tri[1]]).cwiseMax(p[tri[2]]);
      const int x0 = std::max(0, static_cast<int>(std::floor((flo.x() - g.origin.x()) / g.cell)) - 1);
      const int x1 = std::min(g.nx - 1, static_cast<int>(std::floor((fhi.x() - g.origin.x()) / g.cell)) + 1);
      const int y0 = std::max(0, static_cast<int>(std::floor((flo.y() - g.origin.y()) / g.cell)) - 1);
      const int y1 = std::min(g.ny - 1, static_cast<int>(std::floor((fhi.y() - g.origin.y()) / g.cell)) + 1);
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) g.cells[static_cast<std::size_t>(y) * g.nx + x].push_back(f);
      }
    }
  }
}

std::optional<RayHit> RayCastOracle::cast(int view_index, double X, double Y) const {
  if (view_index < 0 || view_index > 5) fail(ErrorCode::InvalidArgument, "view index");
  const auto& cam = cameras_[view_index];
  const auto& g = grids_[view_index];
  const auto& ref = *reference_;

  const Vec3 plane = cam.unproject(X, Y);
  const Vec2 q(cam.right.dot(plane), cam.up.dot(plane));
  const int cx = static_cast<int>(std::floor((q.x() - g.origin.x()) / g.cell));
  const int cy = static_cast<int>(std::floor((q.y() - g.origin.y()) / g.cell));
  if (cx < 0 || cy < 0 || cx >= g.nx || cy >= g.ny) return std::nullopt;

  // Start the ray far in front of the mesh and shoot it away from the camera.
  const double start = 1e3 + ref.longest_axis_length * 10.0;
  const Vec3 O = plane + cam.toward * start;
  const Vec3 D = -cam.toward;

  std::optional<RayHit> best;
  double best_t = std::numeric_limits<double>::infinity();
  for (auto f : g.cells[static_cast<std::size_t>(cy) * g.nx + cx]) {
    const auto& tri = ref.faces[f];
    const Vec3& v0 = ref.vertices[tri[0]];
    const Vec3 e1 = ref.vertices[tri[1]] - v0;
    const Vec3 e2 = ref.vertices[tri[2]] - v0;
    const Vec3 pv = D.cross(e2);
    const double det = e1.dot(pv);
    if (std::abs(det) < 1e-300) continue;
    const double inv = 1.0 / det;
    const Vec3 s = O - v0;
    const double u = s.dot(pv) * inv;
    if (u < -kRayEps || u > 1.0 + kRayEps) continue;
    const Vec3 qv = s.cross(e1);
    const double v = D.dot(qv) * inv;
    if (v < -kRayEps || u + v > 1.0 + kRayEps) continue;
    const double t = e2.dot(qv) * inv;
    if (t < best_t) {
      best_t = t;
      best = RayHit{f, {1.0 - u - v, u, v}, start - t + cam.toward.dot(plane)};
    }
  }
  return best;
}

ErrorStats summarize(std::vector<double> values) {
  ErrorStats s;
  s.count = values.size();
  if (values.empty()) return s;
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  s.median = n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * double(n)));
  s.p95 = values[std::max<std::size_t>(rank, 1) - 1];
  s.max = values.back();
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / double(n);
  return s;
}

std::vector<double> roundtrip_errors(std::span<const Vec3> attributes,
                                     const posmap::PositionMapAtlas& atlas,
                                     const RayCastOracle& oracle, Sampling sampling) {
  const auto& ref = oracle.reference();
  if (attributes.size() != ref.vertex_count()) {
    fail(ErrorCode::VertexCountMismatch, "attributes do not match the reference mesh");
  }
  auto value_of = [&](const RayHit& h) {
    const auto& f = ref.faces[h.face];
    return Vec3(h.bary[0] * attributes[f[0]] + h.bary[1] * attributes[f[1]] +
                h.bary[2] * attributes[f[2]]);
  };

  std::vector<double> errors;
  errors.reserve(atlas.foreground_count());
  for (std::size_t i = 0; i < atlas.pixel_count(); ++i) {
    if (!atlas.mask[i]) continue;
    const auto px = atlas.pixel(i);
    const int k = atlas.layout.tile_index_at(px.x, px.y);
    if (k < 0) fail(ErrorCode::MaskMismatch, "foreground pixel outside every tile");
    const auto& tile = oracle.cameras()[k].tile;
    const double lx = px.x - tile.x0, ly = px.y - tile.y0;

    const auto center = oracle.cast(k, lx + 0.5, ly + 0.5);
    if (!center) {
      fail(ErrorCode::MaskMismatch, "oracle ray misses foreground pixel (" + std::to_string(px.x) +
                                        "," + std::to_string(px.y) + ")");
    }
    Vec3 expected = value_of(*center);
    if (sampling == Sampling::Footprint) {
      Vec3 sum = Vec3::Zero();
      int hits = 0;
      for (int sy = 0; sy < 4; ++sy) {
        for (int sx = 0; sx < 4; ++sx) {
          const auto h = oracle.cast(k, lx + (sx + 0.5) / 4.0, ly + (sy + 0.5) / 4.0);
          if (!h) continue;
          sum += value_of(*h);
          ++hits;
        }
      }
      if (hits > 0) expected = sum / hits;
    }
    errors.push_back((atlas.values[i] - expected).norm());
  }
  return errors;
}

ErrorStats roundtrip_error(std::span<const Vec3> attributes, const posmap::PositionMapAtlas& atlas,
                           const RayCastOracle& oracle, Sampling sampling) {
  return summarize(roundtrip_errors(attributes, atlas, oracle, sampling));
}

// ---- PCA curve ----

std::vector<CurvePoint> pca_curve(const pca::PcaBasis& basis, const posmap::PositionMapAtlas& sample,
                                  std::span<const int> Ms) {
  std::vector<CurvePoint> out;
  for (int m : Ms) {
    if (m < 0 || m > basis.M()) fail(ErrorCode::InvalidArgument, "M beyond basis size");
    out.push_back({m, pca::reconstruction_error(basis.truncated(m), sample)});
  }
  return out;
}

// ---- stability ----

StabilityReport stability_report(std::span<const rollout::TrajectoryRecord> records, int window,
                                 int stride) {
  if (records.empty()) fail(ErrorCode::InvalidArgument, "empty trajectory");
  if (window < 2 || stride < 1) fail(ErrorCode::InvalidArgument, "bad window/stride");
  if (records.size() < static_cast<std::size_t>(window)) {
    fail(ErrorCode::InvalidArgument, "trajectory shorter than one window");
  }
  StabilityReport rep;
  rep.frames = records.size();
  rep.window = window;
  rep.stride = stride;
  rep.window_count = (records.size() - window) / stride + 1;

  const std::array<std::string, 3> names = {"root_pixel_deviation", "increment", "fg_count"};
  for (int s = 0; s < 3; ++s) {
    std::vector<double> v(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& r = records[i];
      v[i] = s == 0 ? r.root_pixel_deviation : s == 1 ? r.increment : double(r.fg_count);
    }
    StatisticTrend t;
    t.name = names[s];
    for (std::size_t w = 0; w < rep.window_count; ++w) {
      double sum = 0.0;
      for (std::size_t i = w * stride; i < w * stride + window; ++i) sum += v[i];
      t.window_means.push_back(sum / window);
    }
    double total = 0.0;
    for (double x : v) total += x;
    t.mean = total / double(v.size());

    // Least-squares slope of window means against window centers.
    const double nw = double(t.window_means.size());
    double xm = 0.0, ym = 0.0;
    for (std::size_t w = 0; w < t.window_means.size(); ++w) {
      xm += double(w * stride) + 0.5 * (window - 1);
      ym += t.window_means[w];
    }
    xm /= nw;
    ym /= nw;
    double sxx = 0.0, sxy = 0.0, var = 0.0;
    for (std::size_t w = 0; w < t.window_means.size(); ++w) {
      const double x = double(w * stride) + 0.5 * (window - 1) - xm;
      sxx += x * x;
      sxy += x * (t.window_means[w] - ym);
      var += (t.window_means[w] - ym) * (t.window_means[w] - ym);
    }
    t.slope_per_1000 = sxx > 0.0 ? 1000.0 * sxy / sxx : 0.0;
    t.stddev = std::sqrt(var / nw);
    t.relative_slope = std::abs(t.slope_per_1000) / floor_abs(t.mean);

    const std::size_t half = v.size() / 2;
    double a = 0.0, b = 0.0;
    for (std::size_t i = 0; i < half; ++i) a += v[i];
    for (std::size_t i = half; i < v.size(); ++i) b += v[i];
    a /= double(half);
    b /= double(v.size() - half);
    t.half_difference = std::abs(b - a) / floor_abs(t.mean);
    rep.statistics.push_back(std::move(t));
  }
  for (const auto& r : records) {
    rep.out_of_range += r.out_of_range;
    rep.clamped += r.clamped;
  }
  return rep;
}

std::string to_json(const TurningReport& report) {
  nlohmann::json j;
  j["events"] = nlohmann::json::array();
  for (const auto& e : report.events) {
    j["events"].push_back({{"start_frame", e.start_frame},
                           {"end_frame", e.end_frame},
                           {"angle_degrees", e.angle_degrees},
                           {"frame_count", e.frame_count}});
  }
  j["mean_180"] = report.mean_180;
  j["mean_90"] = report.mean_90;
  j["count_180"] = report.count_180;
  j["count_90"] = report.count_90;
  return j.dump(2);
}

std::string to_json(const StabilityReport& report) {
  nlohmann::json j;
  j["frames"] = report.frames;
  j["window"] = report.window;
  j["stride"] = report.stride;
  j["window_count"] = report.window_count;
  j["out_of_range"] = report.out_of_range;
  j["clamped"] = report.clamped;
  j["note"] =
      "FVD/PSNR/LPIPS need trained appearance networks and video features; these geometric "
      "statistics stand in as stability proxies";
  for (const auto& t : report.statistics) {
    j["statistics"][t.name] = {{"mean", t.mean},
                               {"stddev", t.stddev},
                               {"slope_per_1000", t.slope_per_1000},
                               {"relative_slope", t.relative_slope},
                               {"half_difference", t.half_difference}};
  }
  return j.dump(2);
}

std::string windowed_csv(const StabilityReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << "window_start";
  for (const auto& t : report.statistics) out << ',' << t.name;
  out << '\n';
  for (std::size_t w = 0; w < report.window_count; ++w) {
    out << w * report.stride;
    for (const auto& t : report.statistics) out << ',' << t.window_means[w];
    out << '\n';
  }
  return out.str();
}

}  // namespace avsim::eval
