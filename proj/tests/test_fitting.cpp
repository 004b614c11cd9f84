#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "test_support.hpp"

#include "craniofit/error.hpp"
#include "craniofit/fitting.hpp"
#include "craniofit/landmark_layout.hpp"

using namespace craniofit;
using craniofit::testing::default_model;

namespace {

landmark_set make_set(const std::vector<vec2>& pts) {
  landmark_set s;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    s.ids.push_back(static_cast<int>(i) + 1);
    s.points.push_back(pts[i]);
  }
  return s;
}

landmark_set random_set(std::mt19937_64& rng, int n = reduced_landmark_count) {
  std::uniform_real_distribution<double> u(20.0, 220.0);
  std::vector<vec2>                      pts;
  for (int i = 0; i < n; ++i) pts.emplace_back(u(rng), u(rng));
  return make_set(pts);
}

// Independent oracle: loops over every unordered index pair and checks edge
// membership by linear search.
double brute_edge_sum(const landmark_set& p, const landmark_set& q, const landmark_graph& g) {
  double sum = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t j = i + 1; j < p.size(); ++j) {
      bool is_edge = false;
      for (const auto& e : g.edges) is_edge |= (e.first == int(i) && e.second == int(j));
      if (!is_edge) continue;
      const double lp = std::hypot(p.points[i].x() - p.points[j].x(), p.points[i].y() - p.points[j].y());
      const double lq = std::hypot(q.points[i].x() - q.points[j].x(), q.points[i].y() - q.points[j].y());
      sum += (lp - lq) * (lp - lq);
    }
  }
  return sum;
}

semantic_code identity_code(std::mt19937_64& rng, const face_model& m, double scale) {
  std::normal_distribution<double> g;
  semantic_code                    x = default_initial_code(m);
  for (int i = 0; i < shape_dim + expression_dim; ++i) x.values[i] = scale * g(rng);
  for (int i = 3; i < pose_dim; ++i) x.theta()[i] = 0.05 * g(rng);
  return x;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("craniofit_fit_" + name)).string();
}

}  // namespace

TEST_CASE("geometric loss of identical sets and zero code is zero") {
  std::mt19937_64 rng(1);
  const auto      p   = random_set(rng);
  const auto      cfg = default_fit_config(default_model());
  const auto      l   = geometric_loss(p, p, delaunay(p.points), semantic_code{}, cfg);
  CHECK(l.e_m == 0.0);
  CHECK(l.e_r == 0.0);
  CHECK(l.total == 0.0);
}

TEST_CASE("single edge of length 3 against 5") {
  const auto     p = make_set({{0, 0}, {3, 0}});
  const auto     q = make_set({{0, 0}, {0, 5}});
  landmark_graph g;
  g.points = p.points;
  g.edges  = {{0, 1}};
  fit_config cfg = default_fit_config(default_model());
  cfg.w_m = 1;
  const auto l = geometric_loss(p, q, g, semantic_code{}, cfg);
  CHECK(l.e_m == doctest::Approx(4.0).epsilon(1e-15));
  CHECK(l.total == doctest::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("geometric loss matches a brute-force edge sum") {
  std::mt19937_64                  rng(2);
  std::normal_distribution<double> g;
  const auto                       cfg = default_fit_config(default_model());
  for (int trial = 0; trial < 100; ++trial) {
    const auto    p = random_set(rng);
    const auto    q = random_set(rng);
    const auto    graph = delaunay(p.points);
    semantic_code code;
    for (int i = 0; i < geometry_dim; ++i) code.values[i] = g(rng);
    const auto l = geometric_loss(p, q, graph, code, cfg);
    CHECK(std::abs(l.e_m - brute_edge_sum(p, q, graph)) <= 1e-10 * std::max(1.0, l.e_m));
    double er = 0;
    for (int i = 0; i < geometry_dim; ++i) er += code.values[i] * code.values[i];
    CHECK(std::abs(l.e_r - er) <= 1e-10 * er);
    CHECK(std::abs(l.total - (cfg.w_m * l.e_m + cfg.w_r * l.e_r)) <= 1e-9);
  }
}

TEST_CASE("geometric loss is invariant to a shared rigid 2D motion") {
  std::mt19937_64                        rng(3);
  std::uniform_real_distribution<double> ang(-3.1, 3.1), off(-100, 100);
  const auto                             cfg = default_fit_config(default_model());
  for (int trial = 0; trial < 20; ++trial) {
    auto       p = random_set(rng), q = random_set(rng);
    const auto graph = delaunay(p.points);
    const auto base  = geometric_loss(p, q, graph, semantic_code{}, cfg).total;
    const auto a = ang(rng);
    const vec2 t(off(rng), off(rng));
    Eigen::Matrix2d r;
    r << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
    for (auto& v : p.points) v = r * v + t;
    for (auto& v : q.points) v = r * v + t;
    CHECK(std::abs(geometric_loss(p, q, graph, semantic_code{}, cfg).total - base) <= 1e-9 * std::max(1.0, base));
  }
}

TEST_CASE("missing ids in P' are listed") {
  std::mt19937_64 rng(4);
  const auto      p = random_set(rng);
  auto            q = p;
  q.ids[4]          = 100;
  q.ids[9]          = 101;
  try {
    geometric_loss(p, q, delaunay(p.points), semantic_code{}, default_fit_config(default_model()));
    FAIL("expected an error");
  } catch (const error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("5") != std::string::npos);
    CHECK(msg.find("10") != std::string::npos);
  }
}

TEST_CASE("fit objective gradient matches central differences") {
  const auto&     m   = default_model();
  const auto      cfg = default_fit_config(m);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 3; ++trial) {
    const auto      target = render_landmarks(m, craniofit::testing::random_code(rng, m, 0.5), cfg.intrinsics);
    const auto      graph  = delaunay(target.points);
    const auto      x      = craniofit::testing::random_code(rng, m, 0.5);
    Eigen::VectorXd grad;
    fit_objective(m, target, graph, x, cfg, &grad);
    const double h     = 1e-5;
    double       worst = 0;
    for (int p = 0; p < code_dim; ++p) {
      semantic_code a = x, b = x;
      a.values[p] += h;
      b.values[p] -= h;
      const double fd = (fit_objective(m, target, graph, a, cfg).total - fit_objective(m, target, graph, b, cfg).total) / (2 * h);
      worst = std::max(worst, std::abs(fd - grad[p]) / std::max(1.0, std::abs(grad[p])));
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("fit started at the generating code takes no step") {
  const auto&     m   = default_model();
  auto            cfg = default_fit_config(m);
  cfg.w_r             = 0;
  std::mt19937_64 rng(6);
  const auto      xs  = identity_code(rng, m, 0.5);
  const auto      r   = fit_single(m, render_landmarks(m, xs, cfg.intrinsics), cfg, xs);
  CHECK(r.iterations == 0);
  CHECK(r.converged);
  CHECK(r.loss.total <= cfg.descent.tolerance);
  CHECK(r.code.values == xs.values);
}

TEST_CASE("round trip from the default code recovers the landmarks") {
  const auto&     m   = default_model();
  const auto      cfg = default_fit_config(m);
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 3; ++trial) {
    const auto xs     = identity_code(rng, m, 0.5);
    const auto target = render_landmarks(m, xs, cfg.intrinsics);
    const auto r      = fit_single(m, target, cfg, default_initial_code(m));
    const auto back   = render_landmarks(m, r.code, cfg.intrinsics);
    CHECK(r.loss.e_m < 1.0);
    CHECK(landmark_rms(back, target, true) < 1.0);
    CHECK(std::abs(r.loss.total - (cfg.w_m * r.loss.e_m + cfg.w_r * r.loss.e_r)) <= 1e-9);
  }
}

TEST_CASE("accepted losses never increase") {
  const auto&     m   = default_model();
  auto            cfg = default_fit_config(m);
  cfg.descent.max_iters = 200;
  std::mt19937_64 rng(8);
  const auto      r = fit_single(m, render_landmarks(m, identity_code(rng, m, 1.0), cfg.intrinsics), cfg,
           default_initial_code(m));
  REQUIRE(r.loss_curve.size() == static_cast<std::size_t>(r.iterations) + 1);
  for (std::size_t i = 1; i < r.loss_curve.size(); ++i) CHECK(r.loss_curve[i] <= r.loss_curve[i - 1]);
}

TEST_CASE("stronger regularization shrinks the geometry") {
  const auto&     m = default_model();
  std::mt19937_64 rng(9);
  const auto      xs     = identity_code(rng, m, 0.5);
  auto            cfg    = default_fit_config(m);
  const auto      target = render_landmarks(m, xs, cfg.intrinsics);
  double          previous = std::numeric_limits<double>::infinity();
  for (double w : {0.01, 1.0, 100.0}) {
    cfg.w_r          = w;
    const auto   r   = fit_single(m, target, cfg, default_initial_code(m));
    const double len = r.code.geometry().norm();
    CHECK(len < previous);
    previous = len;
  }
  CHECK(previous < 0.2 * xs.geometry().norm());
}

TEST_CASE("folding the head rotation into the camera keeps the projection") {
  const auto&     m = default_model();
  const auto      k = default_fit_config(m).intrinsics;
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 5; ++trial) {
    auto x                   = craniofit::testing::random_code(rng, m, 0.5);
    const auto moved         = move_head_rotation_to_camera(m, x);
    CHECK(moved.theta().head<3>().norm() == 0.0);
    CHECK(landmark_rms(render_landmarks(m, moved, k), render_landmarks(m, x, k), false) < 1e-9);
  }
}

TEST_CASE("orbiting the camera preserves edge lengths up to perspective") {
  const auto& m  = default_model();
  const auto  k  = default_fit_config(m).intrinsics;
  const auto  x  = default_initial_code(m);
  const auto  o  = orbit_camera(x, vec3(0, 0, 0.3));
  // a roll about the optical axis is an in-plane rotation of the image
  CHECK(landmark_rms(render_landmarks(m, o, k), render_landmarks(m, x, k), true) < 1e-9);
  CHECK(landmark_rms(render_landmarks(m, o, k), render_landmarks(m, x, k), false) > 1.0);
}

TEST_CASE("multi-image fit with one image equals the single fit") {
  const auto&     m   = default_model();
  auto            cfg = default_fit_config(m);
  cfg.descent.max_iters = 100;
  std::mt19937_64 rng(11);
  const auto      set    = render_landmarks(m, identity_code(rng, m, 0.5), cfg.intrinsics);
  const auto      single = fit_single(m, set, cfg, default_initial_code(m));
  const auto      multi  = fit_multi(m, {set}, cfg, default_initial_code(m));
  CHECK(multi.geometry == single.code.geometry());
  CHECK(multi.codes.front().values == single.code.values);
  CHECK(multi.total_loss == single.loss.total);
}

TEST_CASE("multi-image fit of identical images keeps the single-fit geometry") {
  const auto&     m   = default_model();
  auto            cfg = default_fit_config(m);
  cfg.descent.max_iters = 5000;
  std::mt19937_64 rng(12);
  const auto      set    = render_landmarks(m, identity_code(rng, m, 0.5), cfg.intrinsics);
  const auto      single = fit_single(m, set, cfg, default_initial_code(m));
  const auto      multi  = fit_multi(m, {set, set, set}, cfg, default_initial_code(m));
  const auto      a      = evaluate(m, single.code.geometry()).vertices;
  const auto      b      = evaluate(m, multi.geometry).vertices;
  CHECK(vertex_deviation(a, b, true).max < 0.5);
  CHECK(multi.total_loss <= 3 * single.loss.total + 1e-9);
}

TEST_CASE("joint optimum is no worse than the averaged start") {
  const auto&     m   = default_model();
  auto            cfg = default_fit_config(m);
  cfg.descent.max_iters = 200;
  std::mt19937_64 rng(13);
  const auto      xs = identity_code(rng, m, 0.5);
  std::vector<landmark_set> sets;
  for (double yaw : {-0.1, 0.05, 0.12}) sets.push_back(render_landmarks(m, orbit_camera(xs, vec3(0, yaw, 0)), cfg.intrinsics));
  const auto multi = fit_multi(m, sets, cfg, default_initial_code(m));

  Eigen::VectorXd mean = Eigen::VectorXd::Zero(geometry_dim);
  for (const auto& r : multi.stage_one) mean += move_head_rotation_to_camera(m, r.code).geometry() / 3.0;
  double naive = 0;
  for (int j = 0; j < 3; ++j) {
    semantic_code c = move_head_rotation_to_camera(m, multi.stage_one[j].code);
    c.geometry()    = mean;
    naive += fit_objective(m, reduce_landmarks(sets[j]), delaunay(sets[j].points), c, cfg).total;
  }
  CHECK(multi.total_loss <= naive);
  double per_image = 0;
  for (const auto& l : multi.per_image) per_image += l.total;
  CHECK(per_image == doctest::Approx(multi.total_loss).epsilon(1e-12));
}

TEST_CASE("landmark files round trip and report line numbers") {
  std::mt19937_64 rng(14);
  const auto      s    = random_set(rng);
  const auto      path = temp_path("lm.txt");
  write_landmarks(s, path);
  const auto back = read_landmarks(path);
  CHECK(back.ids == s.ids);
  CHECK(back.points == s.points);

  {
    std::ofstream out(path);
    out << "# header\n1 2 3\n2 4 oops\n";
  }
  try {
    read_landmarks(path);
    FAIL("expected a parse error");
  } catch (const error& e) {
    CHECK(e.kind() == error_kind::parse);
    CHECK(std::string(e.what()).find(path + ":3") != std::string::npos);
  }
  {
    std::ofstream out(path);
    out << "1 2 3\n1 4 5\n";
  }
  CHECK_THROWS_AS(read_landmarks(path), error);
  CHECK_THROWS_AS(read_landmarks(temp_path("absent.txt")), error);
  std::filesystem::remove(path);
}

TEST_CASE("66 detector points reduce to the 46 merged landmarks") {
  std::mt19937_64                        rng(15);
  std::uniform_real_distribution<double> u(0, 240);
  landmark_set                           det;
  for (int id = 1; id <= detected_landmark_count; ++id) {
    det.ids.push_back(id);
    det.points.emplace_back(u(rng), u(rng));
  }
  const auto red = reduce_landmarks(det);
  red.validate(true);
  for (const auto& lm : reduced_landmark_table()) {
    vec2 mean = vec2::Zero();
    for (int s : lm.sources) mean += det.at(s);
    mean /= double(lm.sources.size());
    CHECK((red.at(lm.id) - mean).norm() < 1e-12);
  }
  CHECK(reduce_landmarks(red).points == red.points);

  det.ids.pop_back();
  det.points.pop_back();
  CHECK_THROWS_AS(reduce_landmarks(det), error);
}

TEST_CASE("fit configuration validation") {
  auto cfg = default_fit_config(default_model());
  cfg.w_m  = 0;
  CHECK_THROWS_AS(cfg.validate(), error);
  cfg     = default_fit_config(default_model());
  cfg.w_r = -1;
  CHECK_THROWS_AS(cfg.validate(), error);
  CHECK_THROWS_AS(fit_multi(default_model(), {}, default_fit_config(default_model()), semantic_code{}), error);
}

TEST_CASE("fitting encoder returns the fitted code") {
  const auto&     m   = default_model();
  auto            cfg = default_fit_config(m);
  cfg.descent.max_iters = 50;
  std::mt19937_64 rng(16);
  const auto      set = render_landmarks(m, identity_code(rng, m, 0.5), cfg.intrinsics);
  fitting_encoder enc(m, cfg);
  CHECK(enc.encode(set).values == fit_single(m, set, cfg, default_initial_code(m)).code.values);
}
