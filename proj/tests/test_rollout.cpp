#include "doctest.h"

#include "avsim/rollout.hpp"

#include "support.hpp"

#include <functional>

using namespace avsim;
using namespace avsim::rollout;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an avsim::Error");
  return ErrorCode::Io;
}

class ShiftPredictor : public predictor::Predictor {
 public:
  explicit ShiftPredictor(Vec3 delta) : delta_(std::move(delta)) {}
  std::string name() const override { return "shift"; }
  predictor::StatePtr initial_state() const override { return std::make_shared<predictor::PredictorState>(); }
  predictor::Prediction predict(const predictor::StatePtr& state,
                                std::span<const posmap::PositionMapAtlas, 3> context, ActionLabel) const override {
    auto next = context[2];
    next.translate(delta_);
    return {std::move(next), state};
  }

 private:
  Vec3 delta_;
};

struct Fixture {
  std::shared_ptr<const posmap::AtlasRasterizer> ras =
      std::make_shared<const posmap::AtlasRasterizer>(testing::humanoid_reference(), 128);
  predictor::Avatar avatar = predictor::Avatar::make(ras, testing::humanoid().rig);
  predictor::KinematicParams params;
  std::shared_ptr<const predictor::KinematicPredictor> kinematic =
      std::make_shared<const predictor::KinematicPredictor>(avatar, params);
  posmap::PositionMapAtlas standing = kinematic->standing_atlas();

  Pipeline pipeline(std::shared_ptr<const predictor::Predictor> p = nullptr) const {
    return Pipeline{p ? p : kinematic, nullptr, ras->waist_pixels(), avatar.s, kDefaultRootTolerance};
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

}  // namespace

TEST_CASE("script parsing") {
  const auto s = parse_script("60W,60S, 3A,20I,D");
  REQUIRE(s.size() == 5);
  CHECK(s[0].action == ActionLabel::Forward);
  CHECK(s[0].repeat == 60);
  CHECK(s[3].action == ActionLabel::Idle);
  CHECK(s[4].repeat == 1);
  CHECK(expand_script(s, 2).size() == 2 * (60 + 60 + 3 + 20 + 1));
  CHECK(expand_script(parse_script("60W,60S,60A,20I"), 10).size() == 2000);
  CHECK(code_of([] { parse_script("3X"); }) == ErrorCode::UnknownAction);
  CHECK(code_of([] { parse_script("12"); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([] { expand_script(parse_script(""), 1); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("init places the standing root at the origin") {
  const auto& f = fixture();
  const auto st = init_session(f.standing, Vec3(3, 0, -2), f.pipeline());
  CHECK((st.world_root - Vec3(3, 0, -2)).norm() < 1e-12);
  CHECK(st.world_positions->size() == f.standing.foreground_count());
  CHECK(st.round == 0);
  auto off = f.standing;
  off.translate(Vec3(0.05, 0, 0));
  CHECK(code_of([&] { init_session(off, Vec3::Zero(), f.pipeline()); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("step is pure and re-centers the context") {
  const auto& f = fixture();
  const auto pipeline = f.pipeline(std::make_shared<ShiftPredictor>(Vec3(0.01, 0, 0)));
  const auto st = init_session(f.standing, Vec3::Zero(), pipeline);
  const auto before = *st.world_positions;
  const auto r = step(st, ActionLabel::Forward, pipeline);
  CHECK(*st.world_positions == before);
  CHECK(st.round == 0);
  CHECK(r.state.round == 1);
  CHECK(r.frame.round == 1);
  CHECK(r.frame.action == ActionLabel::Forward);
  CHECK(r.frame.increment == doctest::Approx(0.01 / f.avatar.s));
  CHECK(r.frame.root_pixel_deviation < 1e-12);
  double recentered = 0.0;
  for (std::size_t i = 0; i < f.standing.pixel_count(); ++i) {
    recentered = std::max(recentered, (r.state.context[2].values[i] - f.standing.values[i]).norm());
  }
  CHECK(recentered < 1e-15);
  // The shifted prediction is re-centered, so the previous frame moves back by the same amount.
  CHECK((r.state.context[1].values[r.state.context[1].foreground_indices()[0]] -
         f.standing.values[f.standing.foreground_indices()[0]] + Vec3(0.01, 0, 0))
            .norm() < 1e-12);
}

TEST_CASE("a failing step leaves the session unchanged") {
  const auto& f = fixture();
  const auto pipeline = f.pipeline(std::make_shared<ShiftPredictor>(Vec3(0.45, 0, 0)));
  auto st = init_session(f.standing, Vec3::Zero(), pipeline);
  CHECK(code_of([&] { step(st, ActionLabel::Forward, pipeline); }) == ErrorCode::OutOfRange);
  CHECK(st.round == 0);
  CHECK(code_of([&] { step(st, static_cast<ActionLabel>('x'), pipeline); }) == ErrorCode::UnknownAction);
}

TEST_CASE("world roots track the kinematic model's own root") {
  const auto& f = fixture();
  const auto pipeline = f.pipeline();
  const auto actions = expand_script(parse_script("15W,10A,12S,6D,8I"));
  const auto traj = run_actions(init_session(f.standing, Vec3::Zero(), pipeline), actions, pipeline);
  REQUIRE(traj.records.size() == actions.size());

  predictor::KinematicState ks;
  const auto& h = testing::humanoid();
  const Vec3 root0 = f.ras->sample_root(predictor::kinematic_pose(ks, h.reference, h.rig, f.params, f.avatar.pivot));
  double err = 0.0;
  for (std::size_t k = 0; k < actions.size(); ++k) {
    ks = predictor::kinematic_advance(ks, actions[k], f.params);
    const Vec3 root = f.ras->sample_root(predictor::kinematic_pose(ks, h.reference, h.rig, f.params, f.avatar.pivot));
    err = std::max(err, (traj.records[k].world_root - (root - root0)).norm());
    CHECK(traj.records[k].out_of_range == 0);
    CHECK(traj.records[k].fg_count == f.standing.foreground_count());
  }
  CHECK(err < 1e-9);
}

TEST_CASE("trajectory JSON lines round trip exactly") {
  testing::TempDir dir;
  TrajectoryRecord r;
  r.round = 17;
  r.action = ActionLabel::Left;
  r.world_root = Vec3(0.1, -1.0 / 3.0, 12345.678901234567);
  r.root_pixel_deviation = 1e-17;
  r.fg_count = 2156;
  r.increment = 0.06;
  r.clamped = 3;
  write_trajectory({r, r}, dir.file("t.jsonl"));
  const auto back = read_trajectory(dir.file("t.jsonl"));
  REQUIRE(back.size() == 2);
  CHECK(back[1].world_root == r.world_root);
  CHECK(back[1].root_pixel_deviation == r.root_pixel_deviation);
  CHECK(to_json_line(back[0]) == to_json_line(r));
  CHECK(code_of([] { parse_json_line("{\"round\":1}"); }) == ErrorCode::MalformedFile);
}
