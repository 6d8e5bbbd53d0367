#include "avsim/splat.hpp"

#include "binio.hpp"
#include "layout_io.hpp"

#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace avsim::splat {

namespace {

constexpr std::array<const char*, kChannels> kPlyProperties = {
    "x",       "y",       "z",       "f_dc_0", "f_dc_1", "f_dc_2", "scale_0",
    "scale_1", "scale_2", "rot_0",   "rot_1",  "rot_2",  "rot_3",  "opacity"};

std::array<float, 4> normalized(const std::array<float, 4>& q) {
  const double n = std::sqrt(double(q[0]) * q[0] + double(q[1]) * q[1] + double(q[2]) * q[2] +
                             double(q[3]) * q[3]);
  if (!(n > 0.0)) fail(ErrorCode::InvalidArgument, "zero quaternion");
  return {float(q[0] / n), float(q[1] / n), float(q[2] / n), float(q[3] / n)};
}

Vec3 to_vec(const std::array<float, 3>& a) { return {a[0], a[1], a[2]}; }

std::array<float, 3> to_arr(const Vec3& v) {
  return {float(v.x()), float(v.y()), float(v.z())};
}

}  // namespace

void BaseAttributeMap::validate() const {
  layout.validate(width, height);
  const auto n = static_cast<std::size_t>(width) * height;
  if (mask.size() != n || color.size() != n || scaling.size() != n || rotation.size() != n ||
      opacity.size() != n) {
    fail(ErrorCode::ShapeMismatch, "base attribute planes do not match the atlas size");
  }
  if (!(standing_height > 0.0f)) fail(ErrorCode::InvalidArgument, "standing height must be positive");
  if (height_axis > 2) fail(ErrorCode::InvalidArgument, "height axis must be 0, 1 or 2");
}

double measure_height(const posmap::PositionMapAtlas& atlas, int axis) {
  if (axis < 0 || axis > 2) fail(ErrorCode::InvalidArgument, "axis must be 0, 1 or 2");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t i = 0; i < atlas.pixel_count(); ++i) {
    if (!atlas.mask[i]) continue;
    lo = std::min(lo, atlas.values[i][axis]);
    hi = std::max(hi, atlas.values[i][axis]);
  }
  if (!(hi >= lo)) fail(ErrorCode::InvalidArgument, "atlas has no foreground");
  return hi - lo;
}

posmap::PositionMapAtlas center_aabb(const posmap::PositionMapAtlas& atlas) {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (std::size_t i = 0; i < atlas.pixel_count(); ++i) {
    if (!atlas.mask[i]) continue;
    lo = lo.cwiseMin(atlas.values[i]);
    hi = hi.cwiseMax(atlas.values[i]);
  }
  if (!(hi.x() >= lo.x())) fail(ErrorCode::InvalidArgument, "atlas has no foreground");
  auto out = atlas;
  out.translate(Vec3::Constant(0.5) - 0.5 * (lo + hi));
  return out;
}

GaussianSplatSet compose_coarse(const posmap::PositionMapAtlas& upscaled, const BaseAttributeMap& base,
                                double posed_height) {
  base.validate();
  if (!(posed_height > 0.0) || !std::isfinite(posed_height)) {
    fail(ErrorCode::InvalidArgument, "posed height must be positive");
  }
  if (upscaled.width != base.width || upscaled.height != base.height ||
      !(upscaled.layout == base.layout) || upscaled.mask != base.mask) {
    fail(ErrorCode::MaskMismatch, "upscaled atlas and base attribute map differ in support");
  }
  const double ratio = double(base.standing_height) / posed_height;
  GaussianSplatSet set;
  set.splats.reserve(upscaled.foreground_count());
  for (std::size_t i = 0; i < upscaled.pixel_count(); ++i) {
    if (!upscaled.mask[i]) continue;
    Splat s;
    s.mean = to_arr(upscaled.values[i]);
    s.color = base.color[i];
    for (int c = 0; c < 3; ++c) s.scaling[c] = float(double(base.scaling[i][c]) * ratio);
    s.rotation = base.rotation[i];
    s.opacity = base.opacity[i];
    set.splats.push_back(s);
  }
  return set;
}

GaussianSplatSet apply_refinement(const GaussianSplatSet& coarse, std::span<const Offset> offsets,
                                  double mean_offset_bound) {
  if (offsets.size() != coarse.size()) {
    fail(ErrorCode::ShapeMismatch, "offset count " + std::to_string(offsets.size()) +
                                       " != splat count " + std::to_string(coarse.size()));
  }
  GaussianSplatSet out = coarse;
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    const auto& d = offsets[i];
    if (std::all_of(d.begin(), d.end(), [](float v) { return v == 0.0f; })) continue;
    auto& s = out.splats[i];
    for (int c = 0; c < 3; ++c) {
      if (std::abs(d[c]) > mean_offset_bound) {
        fail(ErrorCode::OutOfRange, "mean offset exceeds bound at splat " + std::to_string(i));
      }
      s.mean[c] += d[c];
      s.color[c] += d[3 + c];
      s.scaling[c] += d[6 + c];
    }
    for (int c = 0; c < 4; ++c) s.rotation[c] += d[9 + c];
    s.rotation = normalized(s.rotation);
    s.opacity = std::clamp(s.opacity + d[13], 0.0f, 1.0f);
  }
  return out;
}

void SimilarityTransform::validate() const {
  if (!((rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-9) ||
      !(std::abs(rotation.determinant() - 1.0) < 1e-9)) {
    fail(ErrorCode::InvalidArgument, "rotation is not a proper orthonormal matrix");
  }
  if (!(scale > 0.0)) fail(ErrorCode::InvalidArgument, "similarity scale must be positive");
}

SimilarityTransform procrustes_align(std::span<const Vec3> source, std::span<const Vec3> target) {
  if (source.size() != target.size()) fail(ErrorCode::ShapeMismatch, "point counts differ");
  if (source.size() < 3) fail(ErrorCode::InvalidArgument, "need at least 3 corresponding points");
  const double n = static_cast<double>(source.size());
  // Identical point sets align by the identity exactly, not up to SVD rounding.
  if (std::equal(source.begin(), source.end(), target.begin())) {
    bool spread = false;
    for (const auto& p : source) spread = spread || p != source.front();
    if (!spread) fail(ErrorCode::DegenerateMesh, "degenerate point configuration for alignment");
    return SimilarityTransform{};
  }

  Vec3 mu_s = Vec3::Zero(), mu_t = Vec3::Zero();
  for (std::size_t i = 0; i < source.size(); ++i) {
    mu_s += source[i];
    mu_t += target[i];
  }
  mu_s /= n;
  mu_t /= n;

  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  double var_s = 0.0;
  for (std::size_t i = 0; i < source.size(); ++i) {
    const Vec3 ds = source[i] - mu_s;
    cov += (target[i] - mu_t) * ds.transpose();
    var_s += ds.squaredNorm();
  }
  cov /= n;
  var_s /= n;

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 d = svd.singularValues();
  if (!(var_s > 0.0) || !(d(1) > 1e-12 * d(0)) || !(d(0) > 0.0)) {
    fail(ErrorCode::DegenerateMesh, "degenerate point configuration for alignment");
  }
  Vec3 sign = Vec3::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) sign(2) = -1.0;

  SimilarityTransform t;
  t.rotation = svd.matrixU() * sign.asDiagonal() * svd.matrixV().transpose();
  t.scale = d.dot(sign) / var_s;
  t.translation = mu_t - t.scale * (t.rotation * mu_s);
  return t;
}

double residual_rms(const SimilarityTransform& t, std::span<const Vec3> source,
                    std::span<const Vec3> target) {
  if (source.size() != target.size() || source.empty()) fail(ErrorCode::ShapeMismatch, "residual");
  double sum = 0.0;
  for (std::size_t i = 0; i < source.size(); ++i) sum += (t.apply(source[i]) - target[i]).squaredNorm();
  return std::sqrt(sum / static_cast<double>(source.size()));
}

GaussianSplatSet to_world(const GaussianSplatSet& set, const SimilarityTransform& transform) {
  transform.validate();
  const Eigen::Quaterniond qr(transform.rotation);
  GaussianSplatSet out = set;
  for (auto& s : out.splats) {
    s.mean = to_arr(transform.apply(to_vec(s.mean)));
    for (auto& c : s.scaling) c = float(double(c) * transform.scale);
    const Eigen::Quaterniond q(s.rotation[0], s.rotation[1], s.rotation[2], s.rotation[3]);
    const Eigen::Quaterniond r = qr * q;
    s.rotation = normalized({float(r.w()), float(r.x()), float(r.y()), float(r.z())});
  }
  return out;
}

std::vector<Vec3> means_of(const GaussianSplatSet& set) {
  std::vector<Vec3> out;
  out.reserve(set.size());
  for (const auto& s : set.splats) out.push_back(to_vec(s.mean));
  return out;
}

posmap::PositionMapAtlas scatter(const posmap::PositionMapAtlas& support, std::span<const Vec3> values) {
  if (values.size() != support.foreground_count()) {
    fail(ErrorCode::ShapeMismatch, "value count does not match the foreground");
  }
  auto out = support;
  std::size_t k = 0;
  for (std::size_t i = 0; i < out.pixel_count(); ++i) {
    out.values[i] = out.mask[i] ? values[k++] : Vec3::Zero();
  }
  return out;
}

ComposedFrame compose_frame(const posmap::PositionMapAtlas& local,
                            std::span<const Vec3> world_positions, const BaseAttributeMap& base,
                            int factor) {
  const auto up_local = center_aabb(posmap::upscale_atlas(local, factor));
  const auto up_world = posmap::upscale_atlas(scatter(local, world_positions), factor);

  ComposedFrame out;
  out.posed_height = measure_height(up_local, base.height_axis);
  const auto coarse = compose_coarse(up_local, base, out.posed_height);
  const std::vector<Offset> zero(coarse.size(), Offset{});
  const auto refined = apply_refinement(coarse, zero);

  const auto source = means_of(refined);
  const auto target = posmap::atlas_to_points(up_world).points;
  out.transform = procrustes_align(source, target);
  out.residual = residual_rms(out.transform, source, target);
  out.splats = to_world(refined, out.transform);
  return out;
}

// ---- PLY ----

std::vector<std::uint8_t> encode_ply(const GaussianSplatSet& set) {
  std::ostringstream header;
  header << "ply\nformat binary_little_endian 1.0\ncomment scaling linear\ncomment opacity linear\n"
         << "element vertex " << set.size() << '\n';
  for (const char* p : kPlyProperties) header << "property float " << p << '\n';
  header << "end_header\n";

  binio::Writer out;
  out.magic(header.str());
  for (const auto& s : set.splats) {
    for (float v : s.mean) out.f32(v);
    for (float v : s.color) out.f32(v);
    for (float v : s.scaling) out.f32(v);
    for (float v : s.rotation) out.f32(v);
    out.f32(s.opacity);
  }
  return std::move(out.data());
}

GaussianSplatSet decode_ply(std::span<const std::uint8_t> bytes) {
  const std::string_view text(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  const std::string_view end_marker = "end_header\n";
  const auto end = text.find(end_marker);
  if (text.substr(0, 4) != "ply\n" || end == std::string_view::npos) {
    fail(ErrorCode::MalformedFile, "PLY: missing header");
  }
  std::istringstream header{std::string(text.substr(0, end))};
  std::string line;
  std::size_t count = 0;
  bool have_count = false, have_format = false;
  std::vector<std::string> properties;
  while (std::getline(header, line)) {
    std::istringstream words(line);
    std::string key;
    words >> key;
    if (key == "format") {
      std::string fmt;
      words >> fmt;
      if (fmt != "binary_little_endian") fail(ErrorCode::MalformedFile, "PLY: unsupported format " + fmt);
      have_format = true;
    } else if (key == "element") {
      std::string name;
      words >> name >> count;
      if (name != "vertex" || have_count) fail(ErrorCode::MalformedFile, "PLY: unexpected element " + name);
      have_count = true;
    } else if (key == "property") {
      std::string type, name;
      words >> type >> name;
      if (type != "float") fail(ErrorCode::MalformedFile, "PLY: property " + name + " is not float");
      properties.push_back(name);
    }
  }
  if (!have_format || !have_count) fail(ErrorCode::MalformedFile, "PLY: incomplete header");
  if (properties.size() != kPlyProperties.size() ||
      !std::equal(properties.begin(), properties.end(), kPlyProperties.begin())) {
    fail(ErrorCode::MalformedFile, "PLY: unexpected property layout");
  }

  binio::Reader in(bytes.subspan(end + end_marker.size()), "PLY");
  in.need(count * kChannels * 4);
  GaussianSplatSet set;
  set.splats.resize(count);
  for (auto& s : set.splats) {
    for (auto& v : s.mean) v = in.f32();
    for (auto& v : s.color) v = in.f32();
    for (auto& v : s.scaling) v = in.f32();
    for (auto& v : s.rotation) v = in.f32();
    s.opacity = in.f32();
  }
  in.expect_end();
  return set;
}

void export_splats(const GaussianSplatSet& set, const std::string& path) {
  binio::write_file(path, encode_ply(set));
}

GaussianSplatSet import_splats(const std::string& path) { return decode_ply(binio::read_file(path)); }

// ---- PMBA ----

std::vector<std::uint8_t> encode_base(const BaseAttributeMap& base) {
  base.validate();
  binio::Writer out;
  out.magic("PMBA");
  out.u32(static_cast<std::uint32_t>(base.width));
  out.u32(static_cast<std::uint32_t>(base.height));
  posmap::io::write_layout(out, base.layout);
  posmap::io::write_mask(out, base.mask);
  for (const auto& c : base.color) for (float v : c) out.f32(v);
  for (const auto& c : base.scaling) for (float v : c) out.f32(v);
  for (const auto& c : base.rotation) for (float v : c) out.f32(v);
  for (float v : base.opacity) out.f32(v);
  out.f32(base.standing_height);
  out.u8(base.height_axis);
  return std::move(out.data());
}

BaseAttributeMap decode_base(std::span<const std::uint8_t> bytes) {
  binio::Reader in(bytes, "PMBA");
  in.expect_magic("PMBA");
  BaseAttributeMap base;
  base.width = static_cast<int>(in.u32());
  base.height = static_cast<int>(in.u32());
  if (base.width <= 0 || base.height <= 0 || base.width > 65535 || base.height > 65535) {
    fail(ErrorCode::MalformedFile, "PMBA: bad dimensions");
  }
  base.layout = posmap::io::read_layout(in);
  const auto n = static_cast<std::size_t>(base.width) * base.height;
  base.mask = posmap::io::read_mask(in, n);
  in.need(n * 11 * 4 + 5);
  base.color.resize(n);
  base.scaling.resize(n);
  base.rotation.resize(n);
  base.opacity.resize(n);
  for (auto& c : base.color) for (auto& v : c) v = in.f32();
  for (auto& c : base.scaling) for (auto& v : c) v = in.f32();
  for (auto& c : base.rotation) for (auto& v : c) v = in.f32();
  for (auto& v : base.opacity) v = in.f32();
  base.standing_height = in.f32();
  base.height_axis = in.u8();
  in.expect_end();
  try {
    base.validate();
  } catch (const Error& e) {
    fail(ErrorCode::MalformedFile, std::string("PMBA: ") + e.what());
  }
  return base;
}

void write_base(const BaseAttributeMap& base, const std::string& path) {
  binio::write_file(path, encode_base(base));
}

BaseAttributeMap read_base(const std::string& path) { return decode_base(binio::read_file(path)); }

BaseAttributeMap make_base_attributes(const posmap::PositionMapAtlas& upscaled_standing,
                                      double pixel_size_normalized) {
  if (!(pixel_size_normalized > 0.0)) fail(ErrorCode::InvalidArgument, "pixel size must be positive");
  const auto centered = center_aabb(upscaled_standing);
  BaseAttributeMap base;
  base.width = centered.width;
  base.height = centered.height;
  base.layout = centered.layout;
  base.mask = centered.mask;
  const auto n = centered.pixel_count();
  base.color.assign(n, {0.0f, 0.0f, 0.0f});
  base.scaling.assign(n, {0.0f, 0.0f, 0.0f});
  base.rotation.assign(n, {1.0f, 0.0f, 0.0f, 0.0f});
  base.opacity.assign(n, 0.0f);

  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (std::size_t i = 0; i < n; ++i) {
    if (!centered.mask[i]) continue;
    lo = lo.cwiseMin(centered.values[i]);
    hi = hi.cwiseMax(centered.values[i]);
  }
  Eigen::Index axis = 1;
  (hi - lo).maxCoeff(&axis);
  base.height_axis = static_cast<std::uint8_t>(axis);
  base.standing_height = static_cast<float>(hi[axis] - lo[axis]);

  const float sc = static_cast<float>(pixel_size_normalized);
  for (std::size_t i = 0; i < n; ++i) {
    if (!centered.mask[i]) continue;
    const double t = (centered.values[i][axis] - lo[axis]) / (hi[axis] - lo[axis]);
    base.color[i] = {float(0.2 + 0.6 * t), float(0.35 + 0.2 * t), float(0.8 - 0.5 * t)};
    base.scaling[i] = {sc, sc, sc};
    base.opacity[i] = 0.9f;
  }
  return base;
}

}  // namespace avsim::splat
