#include "avsim/rollout.hpp"

#include "json.hpp"

#include <cctype>
#include <fstream>

namespace avsim::rollout {

namespace {

// Ordinal of each waist pixel within the foreground list.
std::vector<std::size_t> waist_ordinals(const posmap::PositionMapAtlas& atlas,
                                        const std::vector<posmap::Pixel>& waist) {
  const auto fg = atlas.foreground_indices();
  std::vector<std::size_t> out;
  out.reserve(waist.size());
  for (const auto& p : waist) {
    const auto idx = static_cast<std::uint32_t>(atlas.index(p.x, p.y));
    const auto it = std::lower_bound(fg.begin(), fg.end(), idx);
    if (it == fg.end() || *it != idx) fail(ErrorCode::MaskMismatch, "waist pixel is background");
    out.push_back(static_cast<std::size_t>(it - fg.begin()));
  }
  return out;
}

Vec3 mean_at(const std::vector<Vec3>& values, const std::vector<std::size_t>& ordinals) {
  Vec3 sum = Vec3::Zero();
  for (auto k : ordinals) sum += values[k];
  return sum / static_cast<double>(ordinals.size());
}

void check_pipeline(const Pipeline& p) {
  if (!p.predictor) fail(ErrorCode::InvalidArgument, "pipeline without predictor");
  if (p.waist_pixels.empty()) fail(ErrorCode::InvalidArgument, "pipeline without waist pixels");
  if (!(p.s > 0.0)) fail(ErrorCode::InvalidArgument, "pipeline scale must be positive");
}

}  // namespace

SessionState init_session(const posmap::PositionMapAtlas& standing, const Vec3& world_origin,
                          const Pipeline& pipeline) {
  check_pipeline(pipeline);
  standing.check_range("standing atlas");
  const Vec3 root = posmap::extract_root(standing, pipeline.waist_pixels);
  const double deviation = (root - Vec3::Constant(0.5)).cwiseAbs().maxCoeff();
  if (deviation > pipeline.root_tolerance) {
    fail(ErrorCode::InvalidArgument, "standing atlas root deviates from 0.5 by " +
                                         std::to_string(deviation));
  }
  if (pipeline.basis) pca::check_support(*pipeline.basis, standing);

  SessionState st;
  st.context = {standing, standing, standing};
  auto world = std::make_shared<std::vector<Vec3>>();
  world->reserve(standing.foreground_count());
  for (std::size_t i = 0; i < standing.pixel_count(); ++i) {
    if (standing.mask[i]) world->push_back((standing.values[i] - root) / pipeline.s + world_origin);
  }
  st.world_root = mean_at(*world, waist_ordinals(standing, pipeline.waist_pixels));
  st.world_positions = std::move(world);
  st.record.s = pipeline.s;
  st.record.translation = pipeline.s * st.world_root;
  st.predictor_state = pipeline.predictor->initial_state();
  return st;
}

StepResult step(const SessionState& state, ActionLabel action, const Pipeline& pipeline) {
  check_pipeline(pipeline);
  if (!is_valid_action(action)) fail(ErrorCode::UnknownAction, "step");
  const auto& ctx = state.context;

  auto prediction = pipeline.predictor->predict(state.predictor_state, ctx, action);
  const auto& raw = prediction.atlas;
  if (!raw.same_support(ctx[2])) {
    fail(ErrorCode::MaskMismatch, "predicted atlas mask differs from the context");
  }

  // Accumulate from the raw prediction, before re-centering and alignment.
  auto world = std::make_shared<std::vector<Vec3>>(*state.world_positions);
  {
    std::size_t k = 0;
    for (std::size_t i = 0; i < raw.pixel_count(); ++i) {
      if (!raw.mask[i]) continue;
      (*world)[k++] += (raw.values[i] - ctx[2].values[i]) / pipeline.s;
    }
  }

  const Vec3 T = posmap::extract_root(raw, pipeline.waist_pixels) - Vec3::Constant(0.5);
  StepResult out;
  auto& next = out.state;
  next.context = {ctx[1], ctx[2], raw};
  for (auto& a : next.context) a.translate(-T);
  next.context[0].check_range("context t-1 after re-centering");
  next.context[1].check_range("context t after re-centering");
  next.context[2].check_range("prediction after re-centering");

  const auto ordinals = waist_ordinals(raw, pipeline.waist_pixels);
  next.world_root = mean_at(*world, ordinals);
  next.world_positions = world;
  next.round = state.round + 1;
  next.record.s = pipeline.s;
  next.record.translation = pipeline.s * next.world_root;
  next.predictor_state = std::move(prediction.state);

  auto& frame = out.frame;
  frame.round = next.round;
  frame.action = action;
  frame.world_root = next.world_root;
  frame.world_positions = next.world_positions;
  frame.root_pixel_deviation =
      (posmap::extract_root(next.context[2], pipeline.waist_pixels) - Vec3::Constant(0.5)).norm();
  frame.fg_count = raw.foreground_count();
  frame.increment = (next.world_root - state.world_root).norm();
  if (pipeline.basis) {
    auto aligned = pca::align(*pipeline.basis, next.context[2]);
    frame.local = std::move(aligned.atlas);
    frame.clamped = aligned.clamped;
  } else {
    frame.local = next.context[2];
  }
  frame.out_of_range = frame.local.out_of_range_count();
  return out;
}

Script parse_script(const std::string& text) {
  Script script;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && (text[i] == ',' || std::isspace(static_cast<unsigned char>(text[i])))) ++i;
    if (i >= text.size()) break;
    long count = 1;
    if (std::isdigit(static_cast<unsigned char>(text[i]))) {
      std::size_t j = i;
      while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
      count = std::stol(text.substr(i, j - i));
      i = j;
      if (i < text.size() && (text[i] == 'x' || text[i] == '*')) ++i;
    }
    if (i >= text.size()) fail(ErrorCode::InvalidArgument, "script ends without an action");
    const auto action = parse_action(text[i]);
    if (!action) fail(ErrorCode::UnknownAction, std::string("script token '") + text[i] + "'");
    if (count < 1) fail(ErrorCode::InvalidArgument, "script repeat count must be >= 1");
    script.push_back({*action, static_cast<int>(count)});
    ++i;
  }
  if (script.empty()) fail(ErrorCode::InvalidArgument, "empty script");
  return script;
}

std::vector<ActionLabel> expand_script(const Script& script, int repeat) {
  if (script.empty()) fail(ErrorCode::InvalidArgument, "empty script");
  if (repeat < 1) fail(ErrorCode::InvalidArgument, "repeat must be >= 1");
  std::vector<ActionLabel> out;
  for (int r = 0; r < repeat; ++r) {
    for (const auto& e : script) out.insert(out.end(), static_cast<std::size_t>(e.repeat), e.action);
  }
  return out;
}

TrajectoryRecord record_of(const WorldFrame& f) {
  return {f.round, f.action, f.world_root, f.root_pixel_deviation, f.fg_count,
          f.increment, f.clamped, f.out_of_range};
}

Trajectory run_actions(const SessionState& state, const std::vector<ActionLabel>& actions,
                       const Pipeline& pipeline, const FrameSink& sink) {
  if (actions.empty()) fail(ErrorCode::InvalidArgument, "empty action list");
  Trajectory t;
  t.records.reserve(actions.size());
  SessionState current = state;
  for (auto a : actions) {
    auto r = step(current, a, pipeline);
    t.records.push_back(record_of(r.frame));
    if (sink) sink(r.frame);
    current = std::move(r.state);
  }
  t.final_state = std::move(current);
  return t;
}

Trajectory run_script(const SessionState& state, const Script& script, const Pipeline& pipeline,
                      int repeat, const FrameSink& sink) {
  return run_actions(state, expand_script(script, repeat), pipeline, sink);
}

std::string to_json_line(const TrajectoryRecord& r) {
  nlohmann::json j;
  j["round"] = r.round;
  j["action"] = std::string(1, action_token(r.action));
  j["world_root"] = {r.world_root.x(), r.world_root.y(), r.world_root.z()};
  j["root_pixel_deviation"] = r.root_pixel_deviation;
  j["fg_count"] = r.fg_count;
  j["increment"] = r.increment;
  j["clamped"] = r.clamped;
  j["out_of_range"] = r.out_of_range;
  return j.dump();
}

TrajectoryRecord parse_json_line(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    TrajectoryRecord r;
    r.round = j.at("round").get<std::uint64_t>();
    r.action = action_from_token(j.at("action").get<std::string>().at(0));
    const auto& w = j.at("world_root");
    r.world_root = Vec3(w.at(0).get<double>(), w.at(1).get<double>(), w.at(2).get<double>());
    r.root_pixel_deviation = j.value("root_pixel_deviation", 0.0);
    r.fg_count = j.value("fg_count", std::size_t{0});
    r.increment = j.value("increment", 0.0);
    r.clamped = j.value("clamped", std::size_t{0});
    r.out_of_range = j.value("out_of_range", std::size_t{0});
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedFile, std::string("trajectory line: ") + e.what());
  } catch (const std::out_of_range&) {
    fail(ErrorCode::MalformedFile, "trajectory line: empty action");
  }
}

void write_trajectory(const std::vector<TrajectoryRecord>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::Io, "cannot create " + path);
  for (const auto& r : records) out << to_json_line(r) << '\n';
  if (!out) fail(ErrorCode::Io, "write failed: " + path);
}

std::vector<TrajectoryRecord> read_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open " + path);
  std::vector<TrajectoryRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(parse_json_line(line));
  }
  return out;
}

}  // namespace avsim::rollout
