// engine: umbrella CLI for the avatar simulation engine.

#include "avsim/assets.hpp"
#include "avsim/eval.hpp"
#include "avsim/ingest.hpp"
#include "avsim/pca.hpp"
#include "avsim/posmap.hpp"
#include "avsim/predictor.hpp"
#include "avsim/protocol.hpp"
#include "avsim/rollout.hpp"
#include "avsim/server.hpp"
#include "avsim/service.hpp"
#include "avsim/splat.hpp"
#include "avsim/synth.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;
using namespace avsim;
using nlohmann::json;

namespace {

std::atomic<bool> g_interrupted{false};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot write " + path);
  out << text;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

std::string frame_name(const std::string& stem, std::size_t i, const std::string& ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%06zu%s", stem.c_str(), i, ext.c_str());
  return buf;
}

assets::PredictorConfig predictor_config(const std::string& config_path, const std::string& kind) {
  assets::PredictorConfig c;
  if (!config_path.empty()) {
    const auto text = read_text(config_path);
    const auto j = json::parse(text, nullptr, false);
    // Accept either a bare predictor block or a full engine config.
    c = (j.is_object() && j.contains("limits")) || (j.is_object() && j.contains("assets_dir"))
            ? assets::parse_engine_config(text).predictor
            : assets::parse_predictor_config(text);
  }
  if (!kind.empty()) c.kind = kind;
  c.validate();
  return c;
}

// ---- subcommands ----

struct SynthArgs {
  std::string out;
  std::string id = "humanoid";
  synth::AvatarBuildOptions options;
};

int run_synth(const SynthArgs& a) {
  synth::write_avatar_dir(a.out, a.id, a.options);
  std::cout << "wrote avatar '" << a.id << "' to " << a.out << "\n";
  return 0;
}

struct IngestArgs {
  std::string path;
  std::string reference;
  bool validate = false;
};

int run_ingest(const IngestArgs& a) {
  ingest::MotionSequence seq;
  if (a.reference.empty()) {
    seq = ingest::read_motion_sequence(a.path);
  } else {
    const auto ref = ingest::read_motion_sequence(a.reference).reference;
    seq = ingest::load_motion_sequence(a.path, *ref);
  }
  if (a.validate) ingest::validate_sequence(seq);
  const auto groups = ingest::build_frame_groups(seq);
  const double s = ingest::compute_global_scale(*seq.reference);
  std::cout << "frames " << seq.size() << "\n"
            << "groups " << groups.size() << "\n"
            << "vertices " << seq.reference->vertex_count() << "\n";
  std::printf("scale %.17g\n", s);
  return 0;
}

struct RenderArgs {
  std::string seq;
  std::string out;
  int res = posmap::kCanonicalResolution;
};

int run_render(const RenderArgs& a) {
  const auto seq = ingest::read_motion_sequence(a.seq);
  ingest::validate_sequence(seq);
  const posmap::AtlasRasterizer ras(seq.reference, a.res);
  const double s = ingest::compute_global_scale(*seq.reference);
  fs::create_directories(a.out);
  json sidecar;
  sidecar["resolution"] = a.res;
  sidecar["scale"] = s;
  sidecar["groups"] = json::array();
  const auto groups = ingest::build_frame_groups(seq);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto fg = posmap::make_frame_group(seq, groups[g], ras, s);
    json files = json::array();
    for (int k = 0; k < 4; ++k) {
      const auto name = frame_name("group", g, "_f" + std::to_string(k) + ".pmat");
      posmap::write_atlas(fg.atlases[k], (fs::path(a.out) / name).string());
      files.push_back(name);
    }
    sidecar["groups"].push_back({{"start", groups[g].start},
                                 {"action", std::string(1, action_token(fg.action))},
                                 {"files", files},
                                 {"record",
                                  {{"s", fg.record.s},
                                   {"translation", vec_json(fg.record.translation)},
                                   {"shift", vec_json(fg.record.shift)}}}});
  }
  write_text((fs::path(a.out) / "groups.json").string(), sidecar.dump(2) + "\n");
  std::cout << "rendered " << groups.size() << " groups (" << 4 * groups.size() << " atlases) to "
            << a.out << "\n";
  return 0;
}

std::vector<posmap::PositionMapAtlas> read_atlas_dir(const std::string& dir, const std::string& pattern) {
  std::vector<fs::path> paths;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (e.path().extension() == ".pmat" && (pattern.empty() || name.find(pattern) != std::string::npos)) {
      paths.push_back(e.path());
    }
  }
  std::sort(paths.begin(), paths.end());
  std::vector<posmap::PositionMapAtlas> atlases;
  for (const auto& p : paths) atlases.push_back(posmap::read_atlas(p.string()));
  return atlases;
}

struct FitArgs {
  std::string atlases;
  std::string pattern;
  int M = pca::kDefaultComponents;
  std::string out;
};

int run_fit_pca(const FitArgs& a) {
  const auto samples = read_atlas_dir(a.atlases, a.pattern);
  if (samples.size() < 2) fail(ErrorCode::InvalidArgument, "fit-pca needs at least two atlases");
  const int cap = static_cast<int>(samples.size()) - 1;
  int M = a.M;
  if (M > cap) {
    std::cerr << "note: M = " << M << " exceeds F - 1 = " << cap << " for " << samples.size()
              << " samples; using " << cap << "\n";
    M = cap;
  }
  const auto basis = pca::fit(samples, M);
  pca::write_basis(basis, a.out);
  std::cout << "fit " << basis.M() << " components over " << samples.size() << " atlases, 3N = "
            << basis.dimension() << "\n";
  return 0;
}

struct CurveArgs {
  std::string basis_dir;
  std::string sample;
  std::vector<int> Ms;
  std::string out;
};

int run_pca_curve(const CurveArgs& a) {
  const fs::path p(a.basis_dir);
  const auto basis = pca::read_basis(fs::is_directory(p) ? (p / "basis.pmpc").string() : p.string());
  const auto sample = posmap::read_atlas(a.sample);
  std::vector<int> Ms = a.Ms;
  if (Ms.empty()) {
    for (int m = 1; m <= basis.M(); m = m < 10 ? m + 1 : m + (m < 50 ? 5 : 10)) Ms.push_back(m);
    if (Ms.back() != basis.M()) Ms.push_back(basis.M());
  }
  std::ostringstream csv;
  csv << "M,error\n";
  char buf[64];
  for (const auto& pt : eval::pca_curve(basis, sample, Ms)) {
    std::snprintf(buf, sizeof buf, "%d,%.17g\n", pt.M, pt.error);
    csv << buf;
  }
  if (a.out.empty()) {
    std::cout << csv.str();
  } else {
    write_text(a.out, csv.str());
  }
  return 0;
}

struct PredictArgs {
  std::vector<std::string> context;
  std::string action = "W";
  std::string predictor = "kinematic";
  std::string avatar;
  std::string config;
  std::string out;
};

int run_predict(const PredictArgs& a) {
  if (a.context.size() != 3) fail(ErrorCode::InvalidArgument, "--context takes three atlases (t-2 t-1 t)");
  if (a.action.size() != 1) fail(ErrorCode::UnknownAction, "unknown action '" + a.action + "'");
  const auto avatar = assets::load_avatar(a.avatar);
  const auto pipeline = assets::make_pipeline(avatar, predictor_config(a.config, a.predictor));
  std::array<posmap::PositionMapAtlas, 3> ctx = {posmap::read_atlas(a.context[0]),
                                                  posmap::read_atlas(a.context[1]),
                                                  posmap::read_atlas(a.context[2])};
  const auto prediction = pipeline.predictor->predict(pipeline.predictor->initial_state(), ctx,
                                                      action_from_token(a.action[0]));
  posmap::write_atlas(prediction.atlas, a.out);
  std::cout << "wrote " << a.out << " (" << pipeline.predictor->name() << ")\n";
  return 0;
}

struct RolloutArgs {
  std::string avatar;
  std::string init;
  std::string script = "60W,60S,60A,20I";
  int repeat = 1;
  std::string out;
  std::string config;
  std::string predictor;
  int frames_every = 0;
};

int run_rollout(const RolloutArgs& a) {
  const auto avatar = assets::load_avatar(a.avatar);
  const auto config = predictor_config(a.config, a.predictor);
  const auto pipeline = assets::make_pipeline(avatar, config);
  const auto standing = a.init.empty() ? avatar.standing : posmap::read_atlas(a.init);
  const auto state = rollout::init_session(standing, Vec3::Zero(), pipeline);
  fs::create_directories(a.out);

  rollout::FrameSink sink;
  if (a.frames_every > 0) {
    sink = [&](const rollout::WorldFrame& f) {
      if (f.round % static_cast<std::uint64_t>(a.frames_every) != 0) return;
      const auto bytes = protocol::encode_frame(protocol::points_message(f));
      write_text((fs::path(a.out) / frame_name("frame", f.round, ".pmfm")).string(),
                 std::string(bytes.begin(), bytes.end()));
    };
  }
  const auto t0 = std::chrono::steady_clock::now();
  const auto traj = rollout::run_script(state, rollout::parse_script(a.script), pipeline, a.repeat, sink);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  rollout::write_trajectory(traj.records, (fs::path(a.out) / "trajectory.jsonl").string());

  std::size_t oor = 0, clamped = 0;
  for (const auto& r : traj.records) {
    oor += r.out_of_range;
    clamped += r.clamped;
  }
  json summary = {{"frames", traj.records.size()},
                  {"predictor", pipeline.predictor->name()},
                  {"config", json::parse(assets::to_json(config))},
                  {"initial_root", vec_json(state.world_root)},
                  {"final_root", vec_json(traj.final_state.world_root)},
                  {"out_of_range", oor},
                  {"clamped", clamped},
                  {"seconds", seconds}};
  write_text((fs::path(a.out) / "summary.json").string(), summary.dump(2) + "\n");
  std::cout << traj.records.size() << " frames in " << seconds << " s, out-of-range " << oor << "\n";
  return 0;
}

struct SplatArgs {
  std::string atlas;
  std::string base;
  std::string out;
};

int run_splat(const SplatArgs& a) {
  const auto up = posmap::read_atlas(a.atlas);
  const auto base = splat::read_base(a.base);
  const auto centered = splat::center_aabb(up);
  const double height = splat::measure_height(centered, base.height_axis);
  const auto coarse = splat::compose_coarse(centered, base, height);
  const std::vector<splat::Offset> zero(coarse.size(), splat::Offset{});
  const auto refined = splat::apply_refinement(coarse, zero);
  splat::export_splats(refined, a.out);
  std::cout << "wrote " << refined.size() << " splats to " << a.out << "\n";
  return 0;
}

struct MetricsArgs {
  std::string trajectory;
  std::string out;
  std::string csv;
  int window = 200;
  int stride = 10;
};

int run_metrics(const MetricsArgs& a) {
  const auto records = rollout::read_trajectory(a.trajectory);
  std::vector<Vec3> roots;
  roots.reserve(records.size());
  for (const auto& r : records) roots.push_back(r.world_root);
  const auto turning = eval::turning_frames(roots);
  const auto stability = eval::stability_report(records, a.window, a.stride);
  json report = {{"turning", json::parse(eval::to_json(turning))},
                 {"stability", json::parse(eval::to_json(stability))}};
  if (a.out.empty()) {
    std::cout << report.dump(2) << "\n";
  } else {
    write_text(a.out, report.dump(2) + "\n");
    std::cout << "180-degree turns " << turning.count_180 << " mean " << turning.mean_180
              << " frames; 90-degree turns " << turning.count_90 << " mean " << turning.mean_90
              << " frames\n";
  }
  if (!a.csv.empty()) write_text(a.csv, eval::windowed_csv(stability));
  return 0;
}

struct ServeArgs {
  std::string assets;
  std::string config;
  std::string static_dir;
  std::string host = "0.0.0.0";
  int port = 8080;
  int stream_port = -1;
};

int run_serve(const ServeArgs& a) {
  assets::EngineConfig config;
  if (!a.config.empty()) config = assets::load_engine_config(a.config);
  if (!a.assets.empty()) config.assets_dir = a.assets;
  if (!a.static_dir.empty()) config.static_dir = a.static_dir;
  service::SessionManager manager(config);
  service::Server server(manager, {a.host, a.port, a.stream_port});
  server.start();
  std::cout << "http on " << a.host << ":" << server.port() << ", streams on port " << server.stream_port()
            << std::endl;
  std::signal(SIGINT, [](int) { g_interrupted = true; });
  std::signal(SIGTERM, [](int) { g_interrupted = true; });
  while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(200));
  server.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Action-driven 3D avatar simulation engine"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic humanoid avatar directory");
  synth_cmd->add_option("--out", synth_args.out, "Output directory")->required();
  synth_cmd->add_option("--id", synth_args.id, "Avatar id");
  synth_cmd->add_option("--res", synth_args.options.resolution, "Atlas resolution");
  synth_cmd->add_option("--components", synth_args.options.components, "PCA components");
  synth_cmd->add_option("--upscale", synth_args.options.upscale, "Splat upscale factor");
  synth_cmd->add_option("--script", synth_args.options.training_script, "Training motion script");
  synth_cmd->add_option("--repeat", synth_args.options.training_repeat, "Training script repeats");

  IngestArgs ingest_args;
  auto* ingest_cmd = app.add_subcommand("ingest", "Load and validate a mesh sequence");
  ingest_cmd->add_option("path", ingest_args.path, "Sequence file (.pmsq)")->required();
  ingest_cmd->add_option("--reference", ingest_args.reference, "Reference mesh file, when separate");
  ingest_cmd->add_flag("--validate", ingest_args.validate, "Run full validation");

  RenderArgs render_args;
  auto* render_cmd = app.add_subcommand("render", "Render normalized group atlases");
  render_cmd->add_option("--seq", render_args.seq, "Sequence file")->required();
  render_cmd->add_option("--out", render_args.out, "Output directory")->required();
  render_cmd->add_option("--res", render_args.res, "Atlas resolution");

  FitArgs fit_args;
  auto* fit_cmd = app.add_subcommand("fit-pca", "Fit a PCA basis over atlases");
  fit_cmd->add_option("--atlases", fit_args.atlases, "Directory of .pmat files")->required();
  fit_cmd->add_option("--match", fit_args.pattern, "Only use files whose name contains this");
  fit_cmd->add_option("-M", fit_args.M, "Number of components");
  fit_cmd->add_option("--out", fit_args.out, "Output basis file")->required();

  CurveArgs curve_args;
  auto* curve_cmd = app.add_subcommand("pca-curve", "CSV of reconstruction error against M");
  curve_cmd->add_option("--basis-dir", curve_args.basis_dir, "Avatar directory or basis file")->required();
  curve_cmd->add_option("--sample", curve_args.sample, "Atlas to reconstruct")->required();
  curve_cmd->add_option("--M", curve_args.Ms, "Component counts")->delimiter(',');
  curve_cmd->add_option("--out", curve_args.out, "CSV file (stdout when omitted)");

  PredictArgs predict_args;
  auto* predict_cmd = app.add_subcommand("predict", "Predict the next atlas from three context atlases");
  predict_cmd->add_option("--context", predict_args.context, "Atlases t-2 t-1 t")->required()->expected(3);
  predict_cmd->add_option("--action", predict_args.action, "W, A, S, D or I");
  predict_cmd->add_option("--predictor", predict_args.predictor, "kinematic or ddim");
  predict_cmd->add_option("--avatar", predict_args.avatar, "Avatar directory")->required();
  predict_cmd->add_option("--config", predict_args.config, "Predictor config JSON");
  predict_cmd->add_option("--out", predict_args.out, "Output atlas")->required();

  RolloutArgs rollout_args;
  auto* rollout_cmd = app.add_subcommand("rollout", "Run a scripted progressive rollout");
  rollout_cmd->add_option("--avatar", rollout_args.avatar, "Avatar directory")->required();
  rollout_cmd->add_option("--init", rollout_args.init, "Initial atlas (default: the avatar's standing atlas)");
  rollout_cmd->add_option("--script", rollout_args.script, "Action script, e.g. 60W,60S,60A,20I");
  rollout_cmd->add_option("--repeat", rollout_args.repeat, "Script repeats");
  rollout_cmd->add_option("--out", rollout_args.out, "Output directory")->required();
  rollout_cmd->add_option("--config", rollout_args.config, "Predictor or engine config JSON");
  rollout_cmd->add_option("--predictor", rollout_args.predictor, "kinematic or ddim (overrides config)");
  rollout_cmd->add_option("--frames-every", rollout_args.frames_every, "Write every Nth frame message");

  SplatArgs splat_args;
  auto* splat_cmd = app.add_subcommand("splat", "Compose coarse splats and export a PLY");
  splat_cmd->add_option("--atlas", splat_args.atlas, "Upscaled atlas")->required();
  splat_cmd->add_option("--base", splat_args.base, "Base attributes (.pmba)")->required();
  splat_cmd->add_option("--out", splat_args.out, "Output .ply")->required();

  MetricsArgs metrics_args;
  auto* metrics_cmd = app.add_subcommand("metrics", "Turning and stability report for a trajectory");
  metrics_cmd->add_option("--trajectory", metrics_args.trajectory, "trajectory.jsonl")->required();
  metrics_cmd->add_option("--out", metrics_args.out, "Report JSON (stdout when omitted)");
  metrics_cmd->add_option("--csv", metrics_args.csv, "Windowed statistics CSV");
  metrics_cmd->add_option("--window", metrics_args.window, "Window length in frames");
  metrics_cmd->add_option("--stride", metrics_args.stride, "Window stride in frames");

  ServeArgs serve_args;
  auto* serve_cmd = app.add_subcommand("serve", "Serve sessions over HTTP and WebSocket");
  serve_cmd->add_option("--assets", serve_args.assets, "Directory of avatar directories");
  serve_cmd->add_option("--config", serve_args.config, "Engine config JSON");
  serve_cmd->add_option("--static", serve_args.static_dir, "Viewer bundle directory");
  serve_cmd->add_option("--host", serve_args.host, "Bind address");
  serve_cmd->add_option("--port", serve_args.port, "HTTP port");
  serve_cmd->add_option("--stream-port", serve_args.stream_port, "WebSocket port (default port + 1)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth_cmd) return run_synth(synth_args);
    if (*ingest_cmd) return run_ingest(ingest_args);
    if (*render_cmd) return run_render(render_args);
    if (*fit_cmd) return run_fit_pca(fit_args);
    if (*curve_cmd) return run_pca_curve(curve_args);
    if (*predict_cmd) return run_predict(predict_args);
    if (*rollout_cmd) return run_rollout(rollout_args);
    if (*splat_cmd) return run_splat(splat_args);
    if (*metrics_cmd) return run_metrics(metrics_args);
    if (*serve_cmd) return run_serve(serve_args);
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
