// Acceptance suite: one PASS/FAIL line per criterion. Every expected value is
// computed here from first principles rather than taken from the library.

#include "avsim/assets.hpp"
#include "avsim/ddim.hpp"
#include "avsim/eval.hpp"
#include "avsim/ingest.hpp"
#include "avsim/pca.hpp"
#include "avsim/posmap.hpp"
#include "avsim/predictor.hpp"
#include "avsim/rollout.hpp"
#include "avsim/service.hpp"
#include "avsim/splat.hpp"
#include "avsim/synth.hpp"

#include "support.hpp"

#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#ifndef AVSIM_ENGINE_PATH
#error "AVSIM_ENGINE_PATH must name the engine executable"
#endif

using namespace avsim;
using avsim::testing::TempDir;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string format(const char* fmt, ...) {
  char buf[1024];
  va_list args;
  va_start(args, fmt);
  std::vsnprintf(buf, sizeof buf, fmt, args);
  va_end(args);
  return buf;
}

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void check(bool ok, const std::string& note) {
    if (!ok) pass = false;
    notes.push_back((ok ? "" : "!") + note);
  }
};

int g_failures = 0;

void report(const std::string& name, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome out;
  try {
    out = body();
  } catch (const std::exception& e) {
    out.pass = false;
    out.notes.push_back(std::string("!exception: ") + e.what());
  }
  std::string detail;
  for (const auto& n : out.notes) detail += (detail.empty() ? "" : "; ") + n;
  std::printf("%s %s (%.2fs): %s\n", out.pass ? "PASS" : "FAIL", name.c_str(), seconds_since(t0),
              detail.c_str());
  std::fflush(stdout);
  if (!out.pass) ++g_failures;
}

// Longest AABB side, computed independently of the library.
double longest_axis(const std::vector<Vec3>& v) {
  Vec3 lo = v.front(), hi = v.front();
  for (const auto& p : v) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  return (hi - lo).maxCoeff();
}

Vec3 mean_of(const std::vector<Vec3>& v, const std::vector<std::uint32_t>& ids) {
  Vec3 m = Vec3::Zero();
  for (auto i : ids) m += v[i];
  return m / double(ids.size());
}

Eigen::Matrix3d yaw(double a) { return Eigen::AngleAxisd(a, Vec3::UnitY()).toRotationMatrix(); }

// Mean of atlas values at the waist pixels, summed here rather than by the library.
Vec3 waist_mean(const posmap::PositionMapAtlas& atlas, const std::vector<posmap::Pixel>& pixels) {
  Vec3 m = Vec3::Zero();
  for (const auto& p : pixels) m += atlas.values[atlas.index(p.x, p.y)];
  return m / double(pixels.size());
}

// ---- shared avatar ----

struct Fixture {
  TempDir dir;
  std::string avatar_dir;
  std::shared_ptr<const assets::AvatarAssets> avatar;
};

Fixture& fixture() {
  static const std::unique_ptr<Fixture> f = [] {
    auto fx = std::make_unique<Fixture>();
    fx->avatar_dir = fx->dir.file("humanoid");
    synth::write_avatar_dir(fx->avatar_dir, "humanoid");
    fx->avatar = std::make_shared<const assets::AvatarAssets>(assets::load_avatar(fx->avatar_dir, "humanoid"));
    return fx;
  }();
  return *f;
}

rollout::Pipeline kinematic_pipeline(bool with_basis = true) {
  assets::PredictorConfig config;
  config.use_basis = with_basis;
  return assets::make_pipeline(*fixture().avatar, config);
}

// ---- 1: normalization ----

Outcome normalization() {
  Outcome out;
  const auto t0 = Clock::now();
  const auto& ref = testing::humanoid().reference;
  const double s = 0.7 / longest_axis(ref.vertices);
  out.check(std::abs(ingest::compute_global_scale(ref) - s) <= 1e-15 * s, format("s=%.17g", s));

  std::mt19937_64 rng(20261016);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> far(-50.0, 50.0);
  std::uniform_real_distribution<double> step(-0.1, 0.1);  // m per frame, within the walking envelope
  std::uniform_real_distribution<double> twist(-0.15, 0.15);
  std::normal_distribution<double> jitter(0.0, 1e-3);

  double root_dev = 0.0, inverse_err = 0.0;
  std::size_t out_of_range = 0;
  for (int g = 0; g < 1000; ++g) {
    const double heading = angle(rng);
    const Vec3 place(far(rng), 0.1 * far(rng) / 50.0, far(rng));
    std::array<ingest::MeshFrame, 4> frames;
    for (int k = 0; k < 4; ++k) {
      const int d = k - 2;
      const Vec3 offset = d == 0 ? Vec3(Vec3::Zero()) : Vec3(Vec3(step(rng), 0.2 * step(rng), step(rng)) * std::abs(d));
      const auto R = yaw(heading + (d == 0 ? 0.0 : twist(rng)));
      frames[k].frame_index = k;
      for (const auto& v : ref.vertices) {
        frames[k].posed_vertices.push_back(R * v + place + offset + Vec3(jitter(rng), jitter(rng), jitter(rng)));
      }
    }
    const auto group = posmap::normalize_group(frames, ref, s);
    root_dev = std::max(root_dev, (mean_of(group.attributes[2], ref.waist_vertex_ids) -
                                   Vec3::Constant(0.5)).cwiseAbs().maxCoeff());
    for (int k = 0; k < 4; ++k) {
      for (std::size_t i = 0; i < ref.vertices.size(); ++i) {
        const Vec3& n = group.attributes[k][i];
        if ((n.array() < 0.0).any() || (n.array() > 1.0).any()) ++out_of_range;
        // Inverse computed from the defining relation, not the record helper.
        const Vec3 back = (n - Vec3::Constant(0.5)) / s + mean_of(frames[2].posed_vertices, ref.waist_vertex_ids);
        inverse_err = std::max(inverse_err, (back - frames[k].posed_vertices[i]).cwiseAbs().maxCoeff());
        inverse_err = std::max(inverse_err,
                               (group.record.inverse(n) - frames[k].posed_vertices[i]).cwiseAbs().maxCoeff());
      }
    }
  }
  const double runtime = seconds_since(t0);
  out.check(root_dev <= 1e-9, format("root max |v-0.5|=%.3g", root_dev));
  out.check(inverse_err <= 1e-6, format("inverse max err=%.3g m", inverse_err));
  out.check(out_of_range == 0, format("out-of-range=%zu", out_of_range));
  out.check(runtime < 10.0, format("runtime=%.2fs", runtime));
  return out;
}

// ---- 2: encode/decode round trip ----

Outcome round_trip() {
  Outcome out;
  const auto t0 = Clock::now();
  const auto& avatar = testing::humanoid();
  const auto ref = testing::humanoid_reference();
  const predictor::KinematicParams params;
  std::vector<ActionLabel> actions(24, ActionLabel::Forward);
  const auto seq = synth::synthesize_sequence(avatar, params, actions);
  const double s = 0.7 / longest_axis(ref->vertices);
  const auto group = posmap::normalize_group(std::span(seq.frames).subspan(18, 4), *ref, s);
  const auto& attributes = group.attributes[3];  // mid-stride pose

  eval::ErrorStats stats[2];
  const int res[2] = {128, 512};
  for (int r = 0; r < 2; ++r) {
    const posmap::AtlasRasterizer ras(ref, res[r]);
    const auto atlas = ras.render(attributes);
    const eval::RayCastOracle oracle(ref, ras.cameras());
    stats[r] = eval::roundtrip_error(attributes, atlas, oracle, eval::Sampling::Footprint);
  }
  const double runtime = seconds_since(t0);
  out.check(stats[0].median < 0.02, format("128: median=%.3g", stats[0].median));
  out.check(stats[0].p95 < 0.05, format("p95=%.3g (n=%zu)", stats[0].p95, stats[0].count));
  out.check(stats[1].median < stats[0].median && stats[1].p95 < stats[0].p95,
            format("512: median=%.3g p95=%.3g", stats[1].median, stats[1].p95));
  out.check(runtime < 60.0, format("runtime=%.2fs", runtime));
  return out;
}

// ---- 3: PCA ----

posmap::PositionMapAtlas with_flat(const posmap::PositionMapAtlas& support, const Eigen::VectorXd& x) {
  auto a = support;
  const auto fg = a.foreground_indices();
  for (std::size_t k = 0; k < fg.size(); ++k) a.values[fg[k]] = x.segment<3>(3 * k);
  return a;
}

Outcome pca_suite() {
  Outcome out;
  const auto t0 = Clock::now();
  constexpr int F = 50, kPatterns = 12;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  posmap::PositionMapAtlas support(128, 128, posmap::ViewLayout::canonical(128, 128));
  for (int y = 0; y < 128; ++y) {
    for (int x = 0; x < 128; ++x) {
      if (support.layout.tile_index_at(x, y) >= 0 && u(rng) < 0.31) support.mask[support.index(x, y)] = 1;
    }
  }
  const Eigen::Index D = 3 * Eigen::Index(support.foreground_count());

  const Eigen::VectorXd base = Eigen::VectorXd::Constant(D, 0.5);
  Eigen::MatrixXd patterns(D, kPatterns);
  for (Eigen::Index i = 0; i < patterns.size(); ++i) patterns.data()[i] = 0.02 * normal(rng);
  auto draw = [&] {
    Eigen::VectorXd x = base;
    for (int j = 0; j < kPatterns; ++j) x += (2.0 * u(rng) - 1.0) * patterns.col(j) * (1.0 / (1 + j));
    for (Eigen::Index i = 0; i < D; ++i) x(i) += 0.002 * normal(rng);
    return x;
  };
  std::vector<posmap::PositionMapAtlas> samples;
  Eigen::MatrixXd X(D, F);
  for (int f = 0; f < F; ++f) {
    X.col(f) = draw();
    samples.push_back(with_flat(support, X.col(f)));
  }
  const auto held_out = with_flat(support, draw());
  const Eigen::VectorXd h = pca::flatten(held_out);

  const auto full = pca::fit(samples, F - 1);
  out.check(full.dimension() == std::size_t(D), format("3N=%lld F=%d", (long long)D, F));

  // Full rank: every training sample is reproduced.
  double full_err = 0.0;
  for (const auto& a : samples) {
    const Eigen::VectorXd r = pca::reconstruct_flat(full, pca::project(full, a));
    full_err = std::max(full_err, (r - pca::flatten(a)).cwiseAbs().maxCoeff());
  }
  out.check(full_err <= 1e-6, format("full-rank err=%.3g", full_err));

  // Oracle: Jacobi SVD of the centered data.
  const Eigen::VectorXd mu = X.rowwise().mean();
  const Eigen::MatrixXd Xc = X.colwise() - mu;
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(Xc, Eigen::ComputeThinU);
  const Eigen::MatrixXd U = svd.matrixU();

  // Idempotence on a truncated basis.
  const auto b20 = full.truncated(20);
  const Eigen::VectorXd w = pca::project(b20, held_out);
  const Eigen::VectorXd once = pca::reconstruct_flat(b20, w);
  const Eigen::VectorXd w2 = pca::project(b20, with_flat(support, once));
  const Eigen::VectorXd twice = pca::reconstruct_flat(b20, w2);
  const double idem = std::max((twice - once).cwiseAbs().maxCoeff(), (w2 - w).cwiseAbs().maxCoeff());
  out.check(idem <= 1e-9, format("idempotence=%.3g", idem));

  // Nested sweep against the oracle.
  double prev = std::numeric_limits<double>::infinity(), oracle_gap = 0.0;
  bool monotone = true;
  for (int M = 1; M <= F - 1; ++M) {
    const double e = pca::reconstruction_error(full.truncated(M), held_out);
    const Eigen::MatrixXd Um = U.leftCols(M);
    const Eigen::VectorXd d = h - mu;
    const double e_oracle = (d - Um * (Um.transpose() * d)).norm();
    oracle_gap = std::max(oracle_gap, std::abs(e - e_oracle));
    if (e > prev) monotone = false;
    prev = e;
  }
  out.check(monotone, "error non-increasing over M=1..49");
  out.check(oracle_gap <= 1e-8, format("oracle gap=%.3g", oracle_gap));

  // Perturbations orthogonal to the leading subspace are rejected.
  Eigen::VectorXd r(D);
  for (Eigen::Index i = 0; i < D; ++i) r(i) = normal(rng);
  const Eigen::MatrixXd U20 = U.leftCols(20);
  for (int pass = 0; pass < 2; ++pass) r -= U20 * (U20.transpose() * r);
  r *= 0.05 / r.cwiseAbs().maxCoeff();
  const Eigen::VectorXd base_rec = pca::reconstruct_flat(b20, pca::project(b20, held_out));
  const Eigen::VectorXd pert_rec = pca::reconstruct_flat(b20, pca::project(b20, with_flat(support, h + r)));
  const double rejection = (pert_rec - base_rec).cwiseAbs().maxCoeff();
  out.check(rejection <= 1e-8, format("orthogonal rejection=%.3g", rejection));

  const double runtime = seconds_since(t0);
  out.check(runtime < 30.0, format("runtime=%.2fs", runtime));
  return out;
}

// ---- 4: DDIM ----

// Perfect noise predictor with its own schedule arithmetic.
class PerfectDenoiser : public predictor::Denoiser {
 public:
  PerfectDenoiser(int T, double b0, double b1, Eigen::VectorXd cond, Eigen::VectorXd uncond)
      : cond_(std::move(cond)), uncond_(std::move(uncond)) {
    double prod = 1.0;
    for (int i = 0; i < T; ++i) {
      prod *= 1.0 - (b0 + (b1 - b0) * double(i) / double(T - 1));
      ab_.push_back(prod);
    }
  }
  Eigen::VectorXd evaluate(const predictor::ContextPack& pack, int t, int token) const override {
    const auto& x0 = token == predictor::kUnconditional ? uncond_ : cond_;
    return (pack.noisy().data - std::sqrt(ab_[t]) * x0) / std::sqrt(1.0 - ab_[t]);
  }

 private:
  Eigen::VectorXd cond_, uncond_;
  std::vector<double> ab_;
};

Outcome ddim_suite() {
  Outcome out;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto latent = [&] {
    predictor::Latent l{16, 16, 3, Eigen::VectorXd(16 * 16 * 3)};
    for (Eigen::Index i = 0; i < l.data.size(); ++i) l.data(i) = u(rng);
    return l;
  };
  const std::array<predictor::Latent, 3> context = {latent(), latent(), latent()};
  const auto x0c = latent().data, x0u = latent().data;
  const PerfectDenoiser perfect(1000, 1e-4, 0.02, x0c, x0u);
  const PerfectDenoiser cond_only(1000, 1e-4, 0.02, x0c, x0c);
  const int token = action_index(ActionLabel::Forward);

  double worst = 0.0;
  bool identical = true, deterministic = true;
  for (int steps : {1, 2, 4, 10, 20}) {
    const auto sched = predictor::make_schedule({1000, 1e-4, 0.02, steps});
    const auto a = predictor::ddim_sample(perfect, sched, context, token, 1.0, 42);
    worst = std::max(worst, (a.data - x0c).cwiseAbs().maxCoeff());
    const auto b = predictor::ddim_sample(cond_only, sched, context, token, 1.0, 42);
    identical = identical && a.data == b.data;
    const auto c = predictor::ddim_sample(perfect, sched, context, token, 1.0, 42);
    deterministic = deterministic && a.data == c.data;
    const auto g = predictor::ddim_sample(perfect, sched, context, token, 3.0, 42);
    worst = std::max(worst, (g.data - (x0u + 3.0 * (x0c - x0u))).cwiseAbs().maxCoeff());
    const auto n = predictor::ddim_sample(perfect, sched, context, token, 0.0, 42);
    worst = std::max(worst, (n.data - x0u).cwiseAbs().maxCoeff());
  }
  out.check(worst <= 1e-5, format("steps {1,2,4,10,20}: max |x0 err|=%.3g (w=0,1,3)", worst));
  out.check(identical, "w=1 bit-identical to the conditional path");
  out.check(deterministic, "repeat sampling bit-identical");

  // End to end through the default DDIM predictor: two rollouts agree bitwise.
  assets::PredictorConfig config;
  config.kind = "ddim";
  config.ddim.guidance_w = 2.0;
  config.ddim.seed = 5;
  const auto& avatar = *fixture().avatar;
  const auto script = rollout::parse_script("10W,5A,10S,5I");
  std::vector<Vec3> roots[2];
  for (auto& r : roots) {
    const auto pipeline = assets::make_pipeline(avatar, config);
    const auto traj = rollout::run_script(rollout::init_session(avatar.standing, Vec3::Zero(), pipeline),
                                          script, pipeline);
    for (const auto& rec : traj.records) r.push_back(rec.world_root);
  }
  out.check(roots[0] == roots[1] && roots[0].size() == 30, "ddim rollout deterministic across runs");
  return out;
}

// ---- 5: progressive inference ----

// Moves the whole body by a fixed normalized offset each round.
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

double max_distance(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  double d = a.size() == b.size() ? 0.0 : std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) d = std::max(d, (a[i] - b[i]).cwiseAbs().maxCoeff());
  return d;
}

Outcome progressive() {
  Outcome out;
  const auto& avatar = *fixture().avatar;
  const auto& waist = avatar.rasterizer->waist_pixels();

  // Idle fixed point; the post-step root pixel is checked on every step.
  const auto pipeline = kinematic_pipeline();
  auto state = rollout::init_session(avatar.standing, Vec3::Zero(), pipeline);
  const auto start_positions = *state.world_positions;
  const Vec3 start_root = state.world_root;
  double drift = 0.0, root_pixel = 0.0;
  for (int k = 0; k < 100; ++k) {
    auto r = rollout::step(state, ActionLabel::Idle, pipeline);
    state = std::move(r.state);
    drift = std::max({drift, (state.world_root - start_root).cwiseAbs().maxCoeff(),
                      max_distance(*state.world_positions, start_positions)});
    root_pixel = std::max(root_pixel, (waist_mean(state.context[2], waist) - Vec3::Constant(0.5)).cwiseAbs().maxCoeff());
  }
  out.check(drift < 1e-6, format("idle drift=%.3g m", drift));

  // Constant velocity: root after k rounds is k * delta / s.
  const Vec3 delta(0.004, 0.0005, -0.003);
  rollout::Pipeline shift = pipeline;
  shift.predictor = std::make_shared<ShiftPredictor>(delta);
  shift.basis = nullptr;
  const double s = 0.7 / longest_axis(avatar.reference->vertices);
  state = rollout::init_session(avatar.standing, Vec3::Zero(), shift);
  const auto origin_positions = *state.world_positions;
  double worst_ratio = 0.0;
  for (int k = 1; k <= 500; ++k) {
    auto r = rollout::step(state, ActionLabel::Forward, shift);
    state = std::move(r.state);
    const Vec3 expect = double(k) * delta / s;
    worst_ratio = std::max(worst_ratio, (state.world_root - expect).norm() / (1e-6 * k));
    root_pixel = std::max(root_pixel, (waist_mean(state.context[2], waist) - Vec3::Constant(0.5)).cwiseAbs().maxCoeff());
  }
  double body_err = 0.0;
  for (std::size_t i = 0; i < origin_positions.size(); ++i) {
    body_err = std::max(body_err, ((*state.world_positions)[i] - origin_positions[i] - 500.0 * delta / s).norm());
  }
  out.check(worst_ratio < 1.0 && body_err < 1e-6 * 500,
            format("constant velocity: max err/(1e-6 k)=%.3g, body err at k=500=%.3g m", worst_ratio, body_err));

  // Root pixel over a walking rollout too.
  state = rollout::init_session(avatar.standing, Vec3::Zero(), pipeline);
  for (auto a : rollout::expand_script(rollout::parse_script("20W,12A,20S,10D,8I"))) {
    auto r = rollout::step(state, a, pipeline);
    state = std::move(r.state);
    root_pixel = std::max(root_pixel, (waist_mean(state.context[2], waist) - Vec3::Constant(0.5)).cwiseAbs().maxCoeff());
  }
  out.check(root_pixel <= 1e-9, format("post-step root pixel max |v-0.5|=%.3g", root_pixel));

  // PCA non-interference, with a basis that spans the rollout's own frames
  // (full rank on them) and with the avatar's shipped basis.
  const auto actions = rollout::expand_script(rollout::parse_script("25W,15A,25S,15D,10I"));
  const auto bare = kinematic_pipeline(false);
  std::vector<posmap::PositionMapAtlas> locals;
  const auto reference = rollout::run_actions(rollout::init_session(avatar.standing, Vec3::Zero(), bare), actions,
                                              bare, [&](const rollout::WorldFrame& f) { locals.push_back(f.local); });
  auto self_basis = std::make_shared<const pca::PcaBasis>(pca::fit(locals, int(locals.size()) - 1));

  double gap = 0.0, self_emit = 0.0;
  for (const auto& b : {self_basis, avatar.basis}) {
    rollout::Pipeline with = bare;
    with.basis = b;
    std::size_t k = 0;
    const auto traj = rollout::run_actions(
        rollout::init_session(avatar.standing, Vec3::Zero(), with), actions, with, [&](const rollout::WorldFrame& f) {
          if (b == self_basis) self_emit = std::max(self_emit, (pca::flatten(f.local) - pca::flatten(locals[k])).cwiseAbs().maxCoeff());
          ++k;
        });
    for (std::size_t i = 0; i < traj.records.size(); ++i) {
      gap = std::max(gap, (traj.records[i].world_root - reference.records[i].world_root).cwiseAbs().maxCoeff());
    }
    gap = std::max(gap, max_distance(*traj.final_state.world_positions, *reference.final_state.world_positions));
  }
  out.check(gap <= 1e-8, format("with/without basis world gap=%.3g", gap));
  out.check(self_emit <= 1e-6, format("full-rank basis emission change=%.3g", self_emit));
  return out;
}

// ---- 6: long rollout ----

Outcome long_rollout() {
  Outcome out;
  const auto t0 = Clock::now();
  const auto pipeline = kinematic_pipeline();
  const auto& avatar = *fixture().avatar;
  const auto traj = rollout::run_script(rollout::init_session(avatar.standing, Vec3::Zero(), pipeline),
                                        rollout::parse_script("60W,60S,60A,20I"), pipeline, 10);
  const double runtime = seconds_since(t0);
  out.check(traj.records.size() == 2000, format("frames=%zu", traj.records.size()));
  const auto report = eval::stability_report(traj.records, 200, 10);
  for (const auto& st : report.statistics) {
    out.check(st.relative_slope < 0.05,
              format("%s: mean=%.4g slope/1000=%.3g rel=%.3g", st.name.c_str(), st.mean, st.slope_per_1000,
                     st.relative_slope));
  }
  std::size_t oor = 0;
  for (const auto& r : traj.records) oor += r.out_of_range;
  out.check(oor == 0 && report.out_of_range == 0, format("out-of-range pixels=%zu", oor));
  out.check(runtime < 300.0, format("runtime=%.2fs", runtime));
  return out;
}

// ---- 7: turning ----

Outcome turning() {
  Outcome out;
  const auto pipeline = kinematic_pipeline();
  const auto& avatar = *fixture().avatar;
  auto roots_of = [&](const std::string& script, int repeat) {
    const auto traj = rollout::run_script(rollout::init_session(avatar.standing, Vec3::Zero(), pipeline),
                                          rollout::parse_script(script), pipeline, repeat);
    std::vector<Vec3> roots;
    for (const auto& r : traj.records) roots.push_back(r.world_root);
    return roots;
  };
  const auto r180 = eval::turning_frames(roots_of("40W,40S", 5));
  const auto r90 = eval::turning_frames(roots_of("40W,40A,40S,40D", 3));

  auto band = [](const eval::TurningReport& r, double target, double lo, double hi) {
    std::size_t n = 0;
    bool ok = true;
    for (const auto& e : r.events) {
      if (std::abs(std::abs(e.angle_degrees) - target) > 45.0) continue;
      ++n;
      ok = ok && e.frame_count >= lo && e.frame_count <= hi;
    }
    return std::pair{ok && n > 0, n};
  };
  const auto [ok180, n180] = band(r180, 180.0, 12, 14);
  const auto [ok90, n90] = band(r90, 90.0, 9, 11);
  out.check(ok180, format("180: %zu turns, mean %.2f frames", n180, r180.mean_180));
  out.check(ok90, format("90: %zu turns, mean %.2f frames", n90, r90.mean_90));
  return out;
}

// ---- 8: Procrustes ----

Outcome procrustes() {
  Outcome out;
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double param_err = 0.0, rms = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Quaterniond q = Eigen::Quaterniond(normal(rng), normal(rng), normal(rng), normal(rng)).normalized();
    const Eigen::Matrix3d R = q.toRotationMatrix();
    const double scale = 0.2 + 4.8 * u(rng);
    const Vec3 t(10 * normal(rng), 10 * normal(rng), 10 * normal(rng));
    std::vector<Vec3> src, dst;
    for (int i = 0; i < 64 + trial; ++i) {
      src.emplace_back(normal(rng), 0.5 * normal(rng), 2.0 * normal(rng));
      dst.push_back(scale * (R * src.back()) + t);
    }
    const auto fit = splat::procrustes_align(src, dst);
    param_err = std::max({param_err, (fit.rotation - R).cwiseAbs().maxCoeff(), std::abs(fit.scale - scale),
                          (fit.translation - t).cwiseAbs().maxCoeff()});
    double sq = 0.0;
    for (std::size_t i = 0; i < src.size(); ++i) {
      sq += (fit.scale * (fit.rotation * src[i]) + fit.translation - dst[i]).squaredNorm();
    }
    rms = std::max(rms, std::sqrt(sq / double(src.size())));
  }
  out.check(param_err < 1e-8, format("max parameter err=%.3g", param_err));
  out.check(rms < 1e-9, format("max residual rms=%.3g", rms));

  std::vector<Vec3> pts;
  for (int i = 0; i < 100; ++i) pts.emplace_back(normal(rng), normal(rng), normal(rng));
  const auto self = splat::procrustes_align(pts, pts);
  const bool exact = self.rotation == Eigen::Matrix3d::Identity() && self.scale == 1.0 && self.translation == Vec3::Zero();
  out.check(exact, "self-alignment exactly identity");
  return out;
}

// ---- 9: splat composition ----

Outcome splat_composition() {
  Outcome out;
  const auto& avatar = *fixture().avatar;
  const auto pipeline = kinematic_pipeline();
  const auto traj = rollout::run_script(rollout::init_session(avatar.standing, Vec3::Zero(), pipeline),
                                        rollout::parse_script("30W,6A"), pipeline);
  const auto& local = traj.final_state.context[2];
  const auto& base = *avatar.base;

  const auto up = posmap::upscale_atlas(local, avatar.upscale);
  std::size_t fg = 0;
  for (auto m : up.mask) fg += m != 0;
  const auto centered = splat::center_aabb(up);
  double lo = 1e300, hi = -1e300;
  for (std::size_t i = 0; i < centered.pixel_count(); ++i) {
    if (!centered.mask[i]) continue;
    lo = std::min(lo, centered.values[i][base.height_axis]);
    hi = std::max(hi, centered.values[i][base.height_axis]);
  }
  const double Hp = hi - lo;
  const auto coarse = splat::compose_coarse(centered, base, Hp);
  out.check(coarse.size() == fg, format("splats=%zu upscaled fg=%zu", coarse.size(), fg));

  bool exact = coarse.size() == fg;
  std::size_t k = 0;
  for (std::size_t i = 0; exact && i < centered.pixel_count(); ++i) {
    if (!centered.mask[i]) continue;
    const auto& s = coarse.splats[k++];
    for (int c = 0; c < 3; ++c) {
      exact = exact && s.scaling[c] == float(double(base.scaling[i][c]) * (double(base.standing_height) / Hp));
      exact = exact && s.mean[c] == float(centered.values[i][c]);
    }
  }
  out.check(exact, format("scaling = base * H_s/H_p exactly (H_s=%.6f H_p=%.6f)", base.standing_height, Hp));

  TempDir dir;
  const auto path = dir.file("frame.ply");
  splat::export_splats(coarse, path);
  const auto back = splat::import_splats(path);
  std::ifstream in(path, std::ios::binary);
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  out.check(back == coarse && splat::encode_ply(back) == bytes, "export/import bit-identical");

  const std::vector<splat::Offset> zero(coarse.size(), splat::Offset{});
  out.check(splat::apply_refinement(coarse, zero) == coarse, "zero refinement is the identity");
  return out;
}

// ---- 10: service ----

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

Outcome service_suite() {
  Outcome out;
  const auto& fx = fixture();
  TempDir dir;
  const std::string script = "60W,60S,60A,20I";
  const int repeat = 2;
  const std::string cmd = std::string("\"") + AVSIM_ENGINE_PATH + "\" rollout --avatar \"" + fx.avatar_dir +
                          "\" --script " + script + " --repeat " + std::to_string(repeat) + " --out \"" +
                          dir.path().string() + "\" > \"" + dir.file("log.txt") + "\" 2>&1";
  const int rc = std::system(cmd.c_str());
  out.check(rc == 0, format("engine rollout exit=%d", rc));
  const auto cli_lines = read_lines(dir.file("trajectory.jsonl"));
  const auto cli = rollout::read_trajectory(dir.file("trajectory.jsonl"));

  assets::EngineConfig config;
  config.avatars["humanoid"] = fx.avatar_dir;
  service::SessionManager manager(config);
  const auto a = manager.create_session("humanoid");
  const auto b = manager.create_session("humanoid");
  const auto actions = rollout::expand_script(rollout::parse_script(script), repeat);
  bool identical = cli.size() == actions.size();
  for (std::size_t i = 0; identical && i < actions.size(); ++i) {
    const auto m = manager.step_session(a.id, actions[i]);
    const auto f = manager.step_frame(b.id, actions[i]);
    identical = m.round == cli[i].round && m.action == cli[i].action && m.world_root == cli[i].world_root &&
                rollout::to_json_line(rollout::record_of(f)) == cli_lines[i];
  }
  out.check(identical, format("%zu session steps match the CLI trajectory bitwise", cli.size()));

  // Burst: pushes arrive much faster than steps.
  const auto c = manager.create_session("humanoid");
  service::ActionStream::Counters counters;
  std::uint32_t last_dropped = 0;
  {
    std::mutex mu;
    service::ActionStream stream(manager, c.id, [&](const protocol::FrameMessage& m) {
      std::lock_guard lock(mu);
      last_dropped = m.dropped;
    });
    for (int i = 0; i < 400; ++i) {
      stream.push(i % 7 == 0 ? ActionLabel::Left : ActionLabel::Forward);
      if (i % 50 == 0) std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    stream.drain();
    counters = stream.counters();
    stream.close();
  }
  out.check(counters.dropped + counters.steps == counters.sends && counters.errors == 0 && counters.sends == 400,
            format("sends=%llu steps=%llu drops=%llu", (unsigned long long)counters.sends,
                   (unsigned long long)counters.steps, (unsigned long long)counters.dropped));
  out.check(last_dropped == counters.dropped && manager.describe(c.id).round == counters.steps,
            "drop counter on the last frame and session round agree");
  return out;
}

}  // namespace

int main() {
  report("[1] normalization", normalization);
  report("[2] atlas round trip", round_trip);
  report("[3] pca suite", pca_suite);
  report("[4] ddim suite", ddim_suite);
  report("[5] progressive inference", progressive);
  report("[6] long rollout stability", long_rollout);
  report("[7] turning responsiveness", turning);
  report("[8] procrustes", procrustes);
  report("[9] splat composition", splat_composition);
  report("[10] service", service_suite);
  std::printf("summary: %d of 10 criteria failing\n", g_failures);
  return g_failures ? 1 : 0;
}
