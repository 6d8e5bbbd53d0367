#pragma once

// Trajectory and geometry metrics: turning responsiveness, decoded-point
// error against an independent ray caster, PCA error curves, and windowed
// stability statistics.

#include "avsim/ingest.hpp"
#include "avsim/pca.hpp"
#include "avsim/posmap.hpp"
#include "avsim/rollout.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace avsim::eval {

// ---- turning ----

struct TurningEvent {
  std::size_t start_frame = 0;  // last frame of the steady run before the turn
  std::size_t end_frame = 0;    // first frame of the steady run after it
  double angle_degrees = 0.0;
  std::size_t frame_count = 0;  // end_frame - start_frame
};

struct TurningReport {
  std::vector<TurningEvent> events;
  double mean_180 = 0.0;  // 0 when no such events
  double mean_90 = 0.0;
  std::size_t count_180 = 0;
  std::size_t count_90 = 0;
};

struct TurningOptions {
  double angle_tolerance_deg = 5.0;
  int steady_window = 5;
  // Frames whose displacement is below speed_fraction * reference_speed are
  // stationary. reference_speed <= 0 means "largest displacement seen".
  double speed_fraction = 0.1;
  double reference_speed = 0.0;
};

// Frame k's direction is root[k] - root[k-1]; frame indices refer to roots.
TurningReport turning_frames(std::span<const Vec3> roots, const TurningOptions& options = {});

// ---- round trip ----

struct RayHit {
  std::uint32_t face = 0;
  std::array<double, 3> bary{};
  double depth = 0.0;  // along the view's toward axis; larger is closer
};

// Orthographic ray caster over the reference mesh with a per-view uniform
// grid. Shares nothing with the rasterizer except the camera framing.
class RayCastOracle {
 public:
  RayCastOracle(std::shared_ptr<const ingest::ReferenceMesh> reference,
                const std::array<posmap::ViewCamera, 6>& cameras);

  // Ray through tile-local coordinate (X, Y) of view `view_index`.
  std::optional<RayHit> cast(int view_index, double X, double Y) const;

  const std::array<posmap::ViewCamera, 6>& cameras() const { return cameras_; }
  const ingest::ReferenceMesh& reference() const { return *reference_; }

 private:
  struct Grid {
    Vec2 origin = Vec2::Zero();
    double cell = 1.0;
    int nx = 0, ny = 0;
    std::vector<std::vector<std::uint32_t>> cells;
  };

  std::shared_ptr<const ingest::ReferenceMesh> reference_;
  std::array<posmap::ViewCamera, 6> cameras_;
  std::array<Grid, 6> grids_;
};

enum class Sampling {
  Center,     // one ray through the pixel center
  Footprint,  // mean of a 4x4 stratified set of rays inside the pixel
};

struct ErrorStats {
  double median = 0.0;
  double p95 = 0.0;
  double max = 0.0;
  double mean = 0.0;
  std::size_t count = 0;
};

ErrorStats summarize(std::vector<double> values);

// Per-foreground-pixel distance between the decoded value and the oracle's
// interpolation of `attributes` (the attributes the atlas was rendered with).
// Throws MaskMismatch when the center ray of a foreground pixel misses.
std::vector<double> roundtrip_errors(std::span<const Vec3> attributes,
                                     const posmap::PositionMapAtlas& atlas,
                                     const RayCastOracle& oracle, Sampling sampling);
ErrorStats roundtrip_error(std::span<const Vec3> attributes, const posmap::PositionMapAtlas& atlas,
                           const RayCastOracle& oracle, Sampling sampling = Sampling::Footprint);

// ---- PCA curve ----

struct CurvePoint {
  int M = 0;
  double error = 0.0;
};

// Error of `sample` under the first M components, for each requested M.
std::vector<CurvePoint> pca_curve(const pca::PcaBasis& basis, const posmap::PositionMapAtlas& sample,
                                  std::span<const int> Ms);

// ---- stability ----

struct StatisticTrend {
  std::string name;
  std::vector<double> window_means;
  double mean = 0.0;
  double stddev = 0.0;            // of the window means
  double slope_per_1000 = 0.0;    // linear trend over window centers
  double relative_slope = 0.0;    // |slope_per_1000| / max(|mean|, floor)
  double half_difference = 0.0;   // |second-half mean - first-half mean| / max(|mean|, floor)
};

struct StabilityReport {
  std::size_t frames = 0;
  int window = 200;
  int stride = 10;
  std::size_t window_count = 0;
  std::vector<StatisticTrend> statistics;  // root_pixel_deviation, increment, fg_count
  std::size_t out_of_range = 0;
  std::size_t clamped = 0;
};

inline constexpr double kRelativeFloor = 1e-9;

StabilityReport stability_report(std::span<const rollout::TrajectoryRecord> records, int window = 200,
                                 int stride = 10);

std::string to_json(const TurningReport& report);
std::string to_json(const StabilityReport& report);
std::string windowed_csv(const StabilityReport& report);

}  // namespace avsim::eval
