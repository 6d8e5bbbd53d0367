#include "avsim/synth.hpp"

#include "avsim/pca.hpp"
#include "avsim/posmap.hpp"
#include "avsim/predictor.hpp"
#include "avsim/rollout.hpp"
#include "avsim/splat.hpp"

#include "json.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

namespace avsim::synth {

namespace {

using predictor::Segment;

struct Ring {
  Vec3 center;
  double ra;  // radius along the tube's reference direction
  double rb;
};

Vec3 to_float(const Vec3& v) {
  return {double(float(v.x())), double(float(v.y())), double(float(v.z()))};
}

class MeshBuilder {
 public:
  explicit MeshBuilder(int radial) : radial_(radial) {}

  // Returns the vertex id of the first vertex of each ring.
  std::vector<std::uint32_t> tube(const std::vector<Ring>& rings, const Vec3& reference,
                                  Segment segment, bool cap_start, bool cap_end) {
    std::vector<std::uint32_t> starts;
    for (std::size_t i = 0; i < rings.size(); ++i) {
      const std::size_t a = i == 0 ? 0 : i - 1;
      const std::size_t b = i + 1 < rings.size() ? i + 1 : i;
      const Vec3 axis = (rings[b].center - rings[a].center).normalized();
      const Vec3 u = (reference - reference.dot(axis) * axis).normalized();
      const Vec3 v = axis.cross(u);
      starts.push_back(static_cast<std::uint32_t>(mesh_.vertices.size()));
      for (int k = 0; k < radial_; ++k) {
        const double th = 2.0 * std::numbers::pi * k / radial_;
        add_vertex(rings[i].center + rings[i].ra * std::cos(th) * u + rings[i].rb * std::sin(th) * v,
                   segment);
      }
    }
    for (std::size_t i = 0; i + 1 < rings.size(); ++i) {
      for (int k = 0; k < radial_; ++k) {
        const std::uint32_t a = starts[i] + k, b = starts[i] + (k + 1) % radial_;
        const std::uint32_t c = starts[i + 1] + k, d = starts[i + 1] + (k + 1) % radial_;
        mesh_.faces.push_back({a, b, d});
        mesh_.faces.push_back({a, d, c});
      }
    }
    if (cap_start) cap(starts.front(), rings.front().center, segment);
    if (cap_end) cap(starts.back(), rings.back().center, segment);
    return starts;
  }

  ingest::ReferenceMesh& mesh() { return mesh_; }
  std::vector<Segment>& segments() { return segments_; }

 private:
  void add_vertex(const Vec3& p, Segment s) {
    mesh_.vertices.push_back(to_float(p));
    segments_.push_back(s);
  }
  void cap(std::uint32_t ring_start, const Vec3& center, Segment s) {
    const auto c = static_cast<std::uint32_t>(mesh_.vertices.size());
    add_vertex(center, s);
    for (int k = 0; k < radial_; ++k) {
      mesh_.faces.push_back({c, ring_start + static_cast<std::uint32_t>(k),
                             ring_start + static_cast<std::uint32_t>((k + 1) % radial_)});
    }
  }

  int radial_;
  ingest::ReferenceMesh mesh_;
  std::vector<Segment> segments_;
};

std::vector<Ring> limb(const Vec3& from, const Vec3& to, double r0, double r1, int rings) {
  std::vector<Ring> out;
  for (int i = 0; i < rings; ++i) {
    const double t = double(i) / (rings - 1);
    const double r = r0 + t * (r1 - r0);
    out.push_back({from + t * (to - from), r, r});
  }
  return out;
}

}  // namespace

SyntheticAvatar make_humanoid(const HumanoidOptions& options) {
  if (options.radial_segments < 6) fail(ErrorCode::InvalidArgument, "radial_segments must be >= 6");
  MeshBuilder b(options.radial_segments);
  const Vec3 X = Vec3::UnitX(), Z = Vec3::UnitZ();
  constexpr double kWaistY = 1.0;

  // Torso from crotch to shoulders; the waist ring sits at y = 1.0.
  const std::vector<Ring> torso = {
      {{0, 0.86, 0}, 0.150, 0.100}, {{0, 0.92, 0}, 0.160, 0.105}, {{0, 0.98, 0}, 0.155, 0.100},
      {{0, kWaistY, 0}, 0.150, 0.100}, {{0, 1.02, 0}, 0.150, 0.100}, {{0, 1.10, 0}, 0.160, 0.105},
      {{0, 1.20, 0}, 0.170, 0.110}, {{0, 1.30, 0}, 0.180, 0.115}, {{0, 1.38, 0}, 0.190, 0.115},
      {{0, 1.44, 0}, 0.170, 0.100}, {{0, 1.47, 0}, 0.080, 0.060}};
  const auto torso_rings = b.tube(torso, X, Segment::Body, true, true);

  // Neck and head.
  std::vector<Ring> head = {{{0, 1.46, 0.0}, 0.050, 0.050}, {{0, 1.52, 0.0}, 0.050, 0.050}};
  for (int i = 1; i <= 8; ++i) {
    const double t = double(i) / 9.0;
    const double r = 0.1 * std::sin(std::numbers::pi * (0.15 + 0.85 * t));
    head.push_back({{0, 1.53 + 0.2 * t, 0.01}, r, r * 1.05});
  }
  b.tube(head, X, Segment::Body, true, true);

  // Arms in A-pose, 30 degrees below horizontal so the side views see the
  // waist. +X is the avatar's left.
  const double ac = std::cos(std::numbers::pi / 6), as = std::sin(std::numbers::pi / 6);
  const Vec3 ls(0.19, 1.40, 0.0), rs(-0.19, 1.40, 0.0);
  b.tube(limb(ls, ls + 0.62 * Vec3(ac, -as, 0), 0.050, 0.035, 9), Z, Segment::LeftArm, true, true);
  b.tube(limb(rs, rs + 0.62 * Vec3(-ac, -as, 0), 0.050, 0.035, 9), Z, Segment::RightArm, true, true);

  // Legs.
  const Vec3 lh(0.09, 0.88, 0.0), rh(-0.09, 0.88, 0.0);
  b.tube(limb(lh, Vec3(0.10, 0.02, 0.0), 0.075, 0.045, 12), Z, Segment::LeftLeg, true, true);
  b.tube(limb(rh, Vec3(-0.10, 0.02, 0.0), 0.075, 0.045, 12), Z, Segment::RightLeg, true, true);

  // Open skirt from just under the waist to mid-thigh.
  const std::vector<Ring> skirt = {{{0, 0.96, 0}, 0.170, 0.120}, {{0, 0.86, 0}, 0.200, 0.150},
                                   {{0, 0.76, 0}, 0.230, 0.180}, {{0, 0.66, 0}, 0.260, 0.210},
                                   {{0, 0.58, 0}, 0.280, 0.230}};
  b.tube(skirt, X, Segment::Loose, false, false);

  SyntheticAvatar out;
  out.reference = std::move(b.mesh());
  const std::uint32_t waist_start = torso_rings[3];
  for (int k = 0; k < options.radial_segments; ++k) out.reference.waist_vertex_ids.push_back(waist_start + k);
  out.reference.update_extent();
  out.reference.validate();

  out.rig.segments = std::move(b.segments());
  out.rig.left_shoulder = ls;
  out.rig.right_shoulder = rs;
  out.rig.left_hip = lh;
  out.rig.right_hip = rh;
  out.rig.loose_top = 0.96;
  out.rig.loose_bottom = 0.58;
  out.rig.validate(out.reference.vertex_count());
  return out;
}

ingest::ReferenceMesh make_quad() {
  ingest::ReferenceMesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}};
  m.faces = {{{0, 1, 2}}, {{0, 2, 3}}};
  m.waist_vertex_ids = {0, 1, 2, 3};
  m.update_extent();
  return m;
}

ingest::MotionSequence synthesize_sequence(const SyntheticAvatar& avatar,
                                           const predictor::KinematicParams& params,
                                           const std::vector<ActionLabel>& actions) {
  params.validate();
  auto ref = std::make_shared<ingest::ReferenceMesh>(avatar.reference);
  const posmap::AtlasRasterizer ras(ref, posmap::kCanonicalResolution);
  const Vec3 pivot = ras.sample_root(ref->vertices);

  ingest::MotionSequence seq;
  seq.reference = ref;
  predictor::KinematicState state;
  for (std::size_t k = 0; k <= actions.size(); ++k) {
    ingest::MeshFrame f;
    f.frame_index = static_cast<std::int64_t>(k);
    f.action = k < actions.size() ? actions[k] : ActionLabel::Idle;
    f.posed_vertices = predictor::kinematic_pose(state, *ref, avatar.rig, params, pivot);
    for (auto& v : f.posed_vertices) v = to_float(v);
    seq.frames.push_back(std::move(f));
    if (k < actions.size()) state = predictor::kinematic_advance(state, actions[k], params);
  }
  return seq;
}

void write_avatar_dir(const std::string& dir, const std::string& avatar_id,
                      const AvatarBuildOptions& options) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const fs::path root(dir);

  const auto avatar = make_humanoid(options.humanoid);
  auto ref = std::make_shared<const ingest::ReferenceMesh>(avatar.reference);

  ingest::MotionSequence rest;
  rest.reference = ref;
  rest.frames.push_back({0, avatar.reference.vertices, ActionLabel::Idle});
  ingest::save_motion_sequence(rest, (root / "reference.pmsq").string());
  predictor::save_rig(avatar.rig, (root / "rig.json").string());

  auto ras = std::make_shared<const posmap::AtlasRasterizer>(ref, options.resolution);
  const auto av = predictor::Avatar::make(ras, avatar.rig);
  const predictor::KinematicPredictor kin(av, options.params);
  const auto standing = kin.standing_atlas();
  posmap::write_atlas(standing, (root / "standing.pmat").string());

  const auto actions = rollout::expand_script(rollout::parse_script(options.training_script),
                                              options.training_repeat);
  const auto train = synthesize_sequence(avatar, options.params, actions);
  ingest::save_motion_sequence(train, (root / "train.pmsq").string());

  std::vector<posmap::PositionMapAtlas> samples;
  for (const auto& g : ingest::build_frame_groups(train)) {
    samples.push_back(posmap::make_frame_group(train, g, *ras, av.s).atlases[3]);
  }
  const int M = std::min<int>(options.components, static_cast<int>(samples.size()) - 1);
  pca::write_basis(pca::fit(samples, M), (root / "basis.pmpc").string());

  const auto up = posmap::upscale_atlas(standing, options.upscale);
  const double px = av.s * ras->max_pixel_size() / options.upscale;
  splat::write_base(splat::make_base_attributes(up, px), (root / "base.pmba").string());

  nlohmann::json m;
  m["id"] = avatar_id;
  m["resolution"] = options.resolution;
  m["upscale"] = options.upscale;
  m["scale"] = av.s;
  m["vertex_count"] = avatar.reference.vertex_count();
  m["foreground_count"] = standing.foreground_count();
  m["files"] = {{"reference", "reference.pmsq"}, {"rig", "rig.json"},   {"standing", "standing.pmat"},
                {"basis", "basis.pmpc"},         {"base", "base.pmba"}, {"training", "train.pmsq"}};
  m["kinematic"] = {{"speed", options.params.speed},
                    {"turn_frames_180", options.params.turn_frames_180},
                    {"turn_frames_90", options.params.turn_frames_90},
                    {"gait_amplitude", options.params.gait_amplitude},
                    {"garment_amplitude", options.params.garment_amplitude},
                    {"stride_length", options.params.stride_length},
                    {"accel_frames", options.params.accel_frames}};
  std::ofstream out(root / "manifest.json");
  if (!out) fail(ErrorCode::Io, "cannot write manifest in " + dir);
  out << m.dump(2) << '\n';
}

}  // namespace avsim::synth
