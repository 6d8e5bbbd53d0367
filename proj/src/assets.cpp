#include "avsim/assets.hpp"

#include "json.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace avsim::assets {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

predictor::KinematicParams params_from(const json& j, predictor::KinematicParams p) {
  p.speed = j.value("speed", p.speed);
  p.turn_frames_180 = j.value("turn_frames_180", p.turn_frames_180);
  p.turn_frames_90 = j.value("turn_frames_90", p.turn_frames_90);
  p.gait_amplitude = j.value("gait_amplitude", p.gait_amplitude);
  p.garment_amplitude = j.value("garment_amplitude", p.garment_amplitude);
  p.stride_length = j.value("stride_length", p.stride_length);
  p.accel_frames = j.value("accel_frames", p.accel_frames);
  p.validate();
  return p;
}

json params_json(const predictor::KinematicParams& p) {
  return {{"speed", p.speed},
          {"turn_frames_180", p.turn_frames_180},
          {"turn_frames_90", p.turn_frames_90},
          {"gait_amplitude", p.gait_amplitude},
          {"garment_amplitude", p.garment_amplitude},
          {"stride_length", p.stride_length},
          {"accel_frames", p.accel_frames}};
}

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::MalformedFile, what + ": " + e.what());
  }
}

PredictorConfig predictor_from(const json& j) {
  PredictorConfig c;
  if (!j.is_object()) fail(ErrorCode::InvalidArgument, "predictor config must be an object");
  try {
    c.kind = j.value("predictor", c.kind);
    if (j.contains("kinematic")) c.kinematic = params_from(j.at("kinematic"), {});
    if (j.contains("ddim")) {
      const auto& d = j.at("ddim");
      c.ddim.schedule.train_steps = d.value("train_steps", c.ddim.schedule.train_steps);
      c.ddim.schedule.beta_start = d.value("beta_start", c.ddim.schedule.beta_start);
      c.ddim.schedule.beta_end = d.value("beta_end", c.ddim.schedule.beta_end);
      c.ddim.schedule.sampling_steps = d.value("steps", c.ddim.schedule.sampling_steps);
      c.ddim.guidance_w = d.value("guidance_w", c.ddim.guidance_w);
      c.ddim.seed = d.value("seed", c.ddim.seed);
      c.ddim.denoiser = d.value("denoiser", c.ddim.denoiser);
    }
    c.use_basis = j.value("use_basis", c.use_basis);
    c.root_tolerance = j.value("root_tolerance", c.root_tolerance);
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidArgument, std::string("predictor config: ") + e.what());
  }
  c.validate();
  return c;
}

json predictor_json(const PredictorConfig& c) {
  json j;
  j["predictor"] = c.kind;
  if (c.kinematic) j["kinematic"] = params_json(*c.kinematic);
  j["ddim"] = {{"train_steps", c.ddim.schedule.train_steps},
               {"beta_start", c.ddim.schedule.beta_start},
               {"beta_end", c.ddim.schedule.beta_end},
               {"steps", c.ddim.schedule.sampling_steps},
               {"guidance_w", c.ddim.guidance_w},
               {"seed", c.ddim.seed},
               {"denoiser", c.ddim.denoiser}};
  j["use_basis"] = c.use_basis;
  j["root_tolerance"] = c.root_tolerance;
  return j;
}

}  // namespace

AvatarAssets load_avatar(const std::string& dir, const std::string& id) {
  const fs::path root(dir);
  const json m = parse_json(slurp(root / "manifest.json"), "manifest " + dir);
  AvatarAssets a;
  a.dir = dir;
  a.manifest = m.dump();
  try {
    a.id = id.empty() ? m.value("id", root.filename().string()) : id;
    const auto& files = m.at("files");
    const int resolution = m.value("resolution", posmap::kCanonicalResolution);
    a.upscale = m.value("upscale", 4);
    a.params = params_from(m.value("kinematic", json::object()), {});

    const auto rest = ingest::read_motion_sequence((root / files.at("reference").get<std::string>()).string());
    a.reference = rest.reference;
    a.rig = predictor::load_rig((root / files.at("rig").get<std::string>()).string());
    a.rig.validate(a.reference->vertex_count());
    a.rasterizer = std::make_shared<const posmap::AtlasRasterizer>(a.reference, resolution);
    a.standing = posmap::read_atlas((root / files.at("standing").get<std::string>()).string());
    if (!a.standing.same_support(a.rasterizer->blank())) {
      fail(ErrorCode::MaskMismatch, "standing atlas does not match the reference rasterization");
    }
    if (files.contains("basis") && fs::exists(root / files.at("basis").get<std::string>())) {
      auto basis = pca::read_basis((root / files.at("basis").get<std::string>()).string());
      pca::check_support(basis, a.standing);
      a.basis = std::make_shared<const pca::PcaBasis>(std::move(basis));
    }
    if (files.contains("base") && fs::exists(root / files.at("base").get<std::string>())) {
      auto base = splat::read_base((root / files.at("base").get<std::string>()).string());
      base.validate();
      a.base = std::make_shared<const splat::BaseAttributeMap>(std::move(base));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::MalformedFile, "manifest " + dir + ": " + e.what());
  }
  return a;
}

void PredictorConfig::validate() const {
  if (kind != "kinematic" && kind != "ddim") {
    fail(ErrorCode::InvalidArgument, "predictor must be 'kinematic' or 'ddim', got '" + kind + "'");
  }
  if (kinematic) kinematic->validate();
  predictor::make_schedule(ddim.schedule).validate();
  if (!std::isfinite(ddim.guidance_w)) fail(ErrorCode::InvalidArgument, "guidance_w must be finite");
  if (!(root_tolerance > 0.0)) fail(ErrorCode::InvalidArgument, "root_tolerance must be positive");
}

PredictorConfig parse_predictor_config(const std::string& json_text) {
  return predictor_from(parse_json(json_text, "predictor config"));
}

std::string to_json(const PredictorConfig& config) { return predictor_json(config).dump(); }

rollout::Pipeline make_pipeline(const AvatarAssets& avatar, const PredictorConfig& config) {
  config.validate();
  const auto av = predictor::Avatar::make(avatar.rasterizer, avatar.rig);
  auto kin = std::make_shared<const predictor::KinematicPredictor>(
      av, config.kinematic.value_or(avatar.params));
  rollout::Pipeline p;
  if (config.kind == "ddim") {
    p.predictor = std::make_shared<const predictor::DdimPredictor>(kin, config.ddim);
  } else {
    p.predictor = kin;
  }
  if (config.use_basis) p.basis = avatar.basis;
  p.waist_pixels = avatar.rasterizer->waist_pixels();
  p.s = av.s;
  p.root_tolerance = config.root_tolerance;
  return p;
}

EngineConfig parse_engine_config(const std::string& json_text) {
  const json j = parse_json(json_text, "engine config");
  EngineConfig c;
  try {
    c.assets_dir = j.value("assets_dir", c.assets_dir);
    c.static_dir = j.value("static_dir", c.static_dir);
    if (j.contains("avatars")) c.avatars = j.at("avatars").get<std::map<std::string, std::string>>();
    if (j.contains("predictor")) c.predictor = predictor_from(j.at("predictor"));
    if (j.contains("limits")) {
      const auto& l = j.at("limits");
      c.limits.idle_timeout_seconds = l.value("idle_timeout_seconds", c.limits.idle_timeout_seconds);
      c.limits.max_sessions = l.value("max_sessions", c.limits.max_sessions);
      c.limits.max_points_per_frame = l.value("max_points_per_frame", c.limits.max_points_per_frame);
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::MalformedFile, std::string("engine config: ") + e.what());
  }
  if (!(c.limits.idle_timeout_seconds > 0.0)) fail(ErrorCode::InvalidArgument, "idle timeout must be positive");
  if (c.limits.max_sessions == 0) fail(ErrorCode::InvalidArgument, "max_sessions must be positive");
  return c;
}

EngineConfig load_engine_config(const std::string& path) { return parse_engine_config(slurp(path)); }

std::optional<std::string> resolve_avatar(const EngineConfig& config, const std::string& id) {
  if (auto it = config.avatars.find(id); it != config.avatars.end()) return it->second;
  if (config.assets_dir.empty() || id.empty()) return std::nullopt;
  // Ids name a subdirectory; reject anything that could escape assets_dir.
  if (id.find_first_of("/\\") != std::string::npos || id == "." || id == "..") return std::nullopt;
  const fs::path dir = fs::path(config.assets_dir) / id;
  if (!fs::exists(dir / "manifest.json")) return std::nullopt;
  return dir.string();
}

}  // namespace avsim::assets
