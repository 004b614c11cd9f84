#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <random>

#include "doctest.h"

#include "craniofit/error.hpp"
#include "craniofit/renderer.hpp"
#include "craniofit/rotation.hpp"
#include "test_support.hpp"

using namespace craniofit;
using craniofit::testing::default_model;
using craniofit::testing::random_code;
using craniofit::testing::sphere_model;

namespace {

std::vector<int> landmark_vertices(const face_model& m) {
  std::vector<int> v;
  for (const auto& [id, idx] : m.anthropometric_map) v.push_back(idx);
  return v;
}

// Direct polynomial forms of the real SH basis, written independently.
std::array<double, 9> sh_polynomials(const vec3& n) {
  const double pi = std::numbers::pi;
  const double x = n.x(), y = n.y(), z = n.z();
  return {0.5 / std::sqrt(pi),
      std::sqrt(3 / (4 * pi)) * y,
      std::sqrt(3 / (4 * pi)) * z,
      std::sqrt(3 / (4 * pi)) * x,
      0.5 * std::sqrt(15 / pi) * x * y,
      0.5 * std::sqrt(15 / pi) * y * z,
      0.25 * std::sqrt(5 / pi) * (3 * z * z - 1),
      0.5 * std::sqrt(15 / pi) * x * z,
      0.25 * std::sqrt(15 / pi) * (x * x - y * y)};
}

struct bbox {
  int x0 = 1 << 30, y0 = 1 << 30, x1 = -1, y1 = -1;
};

bbox coverage_box(const rendered_image& img) {
  bbox b;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      if (img.coverage[static_cast<std::size_t>(y) * img.width() + x] >= 0) {
        b.x0 = std::min(b.x0, x);
        b.x1 = std::max(b.x1, x);
        b.y0 = std::min(b.y0, y);
        b.y1 = std::max(b.y1, y);
      }
  return b;
}

void check_golden(const std::string& name, std::uint64_t hash) {
  const std::string path = std::string(CRANIOFIT_FIXTURES) + "/" + name;
  if (std::getenv("CRANIOFIT_UPDATE_GOLDEN")) {
    std::ofstream(path) << hash << '\n';
  }
  std::ifstream in(path);
  REQUIRE_MESSAGE(in.good(), "missing golden file " << path);
  std::uint64_t expect = 0;
  in >> expect;
  CHECK(hash == expect);
}

}  // namespace

TEST_CASE("projection on the optical axis") {
  camera cam;
  cam.intrinsics.focal = 1.0;
  const auto p = project(cam, vec3(0, 0, 1));
  CHECK(p.pixel.norm() == 0.0);
  CHECK(p.depth == 1.0);
}

TEST_CASE("translation along the axis adds depth") {
  camera cam;
  cam.intrinsics.focal = 500;
  const auto near = project(cam, vec3(0, 0, 10));
  cam.translation = vec3(0, 0, -25);
  const auto far = project(cam, vec3(0, 0, 10));
  CHECK(far.depth - near.depth == doctest::Approx(25.0));
}

TEST_CASE("projection matches an explicit rotation-matrix oracle") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  camera cam;
  cam.intrinsics.focal           = 700;
  cam.intrinsics.principal_point = vec2(120, 110);
  cam.rotation                   = vec3(0, std::numbers::pi / 2, 0);
  cam.translation                = vec3(-300, 5, 2);
  // rotation by pi/2 about y: (x, y, z) -> (z, y, -x)
  mat3 r;
  r << 0, 0, 1, 0, 1, 0, -1, 0, 0;
  for (int i = 0; i < 20; ++i) {
    const vec3 p(g(rng) * 30, g(rng) * 30, g(rng) * 30);
    const vec3 xc = r.transpose() * (p - cam.translation);
    const auto out = project(cam, p);
    CHECK((out.pixel - (cam.intrinsics.principal_point + 700 * vec2(xc.x() / xc.z(), xc.y() / xc.z()))).norm() < 1e-9);
    CHECK(std::abs(out.depth - xc.z()) < 1e-9);
  }
}

TEST_CASE("points behind the camera are rejected") {
  camera cam;
  CHECK_THROWS_AS(project(cam, vec3(0, 0, -1)), error);
  CHECK_THROWS_AS(project(cam, vec3(1, 0, 0)), error);
}

TEST_CASE("band-0 illumination is constant") {
  Eigen::VectorXd gamma = Eigen::VectorXd::Zero(gamma_dim);
  for (int ch = 0; ch < 3; ++ch) gamma[ch * 9] = 1.7;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  for (int i = 0; i < 10; ++i) {
    const vec3 c = shade(vec3(g(rng), g(rng), g(rng)).normalized(), gamma, 1.0);
    for (int ch = 0; ch < 3; ++ch) CHECK(c[ch] == doctest::Approx(1.7 * 0.2820947917738781).epsilon(1e-14));
  }
  CHECK(shade(vec3(0, 0, 1), Eigen::VectorXd::Zero(gamma_dim)).isZero(0.0));
}

TEST_CASE("SH basis parity and polynomial forms") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  for (int i = 0; i < 50; ++i) {
    const vec3 n = vec3(g(rng), g(rng), g(rng)).normalized();
    const auto a = sh_basis(n), b = sh_basis(-n), p = sh_polynomials(n);
    for (int k = 0; k < 9; ++k) {
      CHECK(std::abs(a[k] - p[k]) < 1e-14);
      const double expect = (k >= 1 && k <= 3) ? -a[k] : a[k];
      CHECK(std::abs(b[k] - expect) < 1e-14);
    }
    Eigen::VectorXd gamma(gamma_dim);
    for (int k = 0; k < gamma_dim; ++k) gamma[k] = g(rng);
    Eigen::VectorXd band1 = Eigen::VectorXd::Zero(gamma_dim), rest = gamma;
    for (int ch = 0; ch < 3; ++ch)
      for (int k = 1; k <= 3; ++k) {
        band1[ch * 9 + k] = gamma[ch * 9 + k];
        rest[ch * 9 + k]  = 0;
      }
    CHECK((shade(n, band1) + shade(-n, band1)).norm() < 1e-13);
    CHECK((shade(n, rest) - shade(-n, rest)).norm() < 1e-13);
  }
}

TEST_CASE("SH gradient matches finite differences") {
  const vec3 n(0.3, -0.5, 0.81);
  const auto grad = sh_basis_gradient(n);
  for (int d = 0; d < 3; ++d) {
    vec3 p = n, m = n;
    p[d] += 1e-6;
    m[d] -= 1e-6;
    const auto a = sh_basis(p), b = sh_basis(m);
    for (int k = 0; k < 9; ++k) CHECK(std::abs((a[k] - b[k]) / 2e-6 - grad[k][d]) < 1e-8);
  }
}

TEST_CASE("shade rejects non-unit normals") {
  CHECK_THROWS_AS(shade(vec3(0, 0, 1.1), Eigen::VectorXd::Zero(gamma_dim)), error);
}

TEST_CASE("sphere under band-0 light is a uniform disk") {
  const face_model m = sphere_model(50.0);
  semantic_code    x;
  x.camera_translation() = vec3(0, 0, -400);
  for (int ch = 0; ch < 3; ++ch) x.gamma()[ch * 9] = 2.0;
  camera_intrinsics k{500, vec2(64, 64), 128, 128};
  const auto img = render(m, x, k);
  REQUIRE(img.covered_pixel_count() > 1000);
  const double c = img.color.at(64, 64, 0);
  CHECK(c == doctest::Approx(0.8 * 2.0 * 0.2820947917738781));
  for (std::size_t i = 0; i < img.coverage.size(); ++i) {
    CHECK((img.coverage[i] >= 0) == std::isfinite(img.depth[i]));
    if (img.coverage[i] < 0) continue;
    for (int ch = 0; ch < 3; ++ch) CHECK(std::abs(img.color.pixels[3 * i + ch] - c) < 1e-6);
  }
}

TEST_CASE("doubling focal doubles the silhouette") {
  const face_model m = sphere_model(40.0, 4);
  semantic_code    x;
  x.camera_translation() = vec3(0, 0, -500);
  for (int ch = 0; ch < 3; ++ch) x.gamma()[ch * 9] = 2.0;
  const auto a = coverage_box(render(m, x, {300, vec2(128, 128), 256, 256}));
  const auto b = coverage_box(render(m, x, {600, vec2(128, 128), 256, 256}));
  const double da = a.x1 - a.x0 + 1, db = b.x1 - b.x0 + 1;
  CHECK(std::abs(db - 2 * da) <= 1.0 + 1e-9);
  CHECK(std::abs((b.y1 - b.y0 + 1) - 2 * (a.y1 - a.y0 + 1)) <= 1.0 + 1e-9);
}

TEST_CASE("fully hidden mesh is an error") {
  const face_model m = sphere_model(10.0, 1);
  semantic_code    x;
  x.camera_translation() = vec3(0, 0, 100);
  CHECK_THROWS_AS(render(m, x, {100, vec2(32, 32), 64, 64}), error);
}

TEST_CASE("rendering is deterministic and matches the golden hash") {
  const auto& m = default_model();
  std::mt19937_64 rng(42);
  const auto x = random_code(rng, m, 0.5);
  const auto k = canonical_setup_for(m).intrinsics;
  const auto a = render(m, x, k), b = render(m, x, k);
  CHECK(a.color.pixels == b.color.pixels);
  CHECK(a.depth == b.depth);
  CHECK(a.coverage == b.coverage);
  check_golden("golden_render.hash", craniofit::testing::image_hash(a.color));
}

TEST_CASE("pinhole derivative of a landmark abscissa") {
  const auto&   m = default_model();
  semantic_code x;
  x.camera_translation() = vec3(0, 0, -600);
  const auto k = canonical_setup_for(m).intrinsics;
  const int  v = m.anthropometric_map.at(5);
  const auto out = forward_vertices(m, x, k, std::vector<int>{v});
  std::vector<output_gradient> g{{v, vec2(1, 0), vec3::Zero()}};
  const auto grad = backward(m, x, k, g);
  CHECK(grad[semantic_code::translation_offset] == doctest::Approx(-k.focal / out[0].depth).epsilon(1e-12));
  CHECK(grad.segment<gamma_dim>(semantic_code::gamma_offset).isZero(0.0));
}

TEST_CASE("backward matches central differences on a landmark loss") {
  const auto& m    = default_model();
  const auto  k    = canonical_setup_for(m).intrinsics;
  const auto  lms  = landmark_vertices(m);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 3; ++trial) {
    const auto x = random_code(rng, m);
    std::vector<vec2> target(lms.size());
    std::vector<vec3> wc(lms.size());
    for (std::size_t i = 0; i < lms.size(); ++i) {
      target[i] = vec2(120 + 40 * g(rng), 120 + 40 * g(rng));
      wc[i]     = vec3(g(rng), g(rng), g(rng));
    }
    auto loss = [&](const semantic_code& c) {
      const auto out = forward_vertices(m, c, k, lms);
      double     s   = 0;
      for (std::size_t i = 0; i < lms.size(); ++i) s += 0.5 * (out[i].pixel - target[i]).squaredNorm() + 10 * wc[i].dot(out[i].color);
      return s;
    };
    const auto out = forward_vertices(m, x, k, lms);
    std::vector<output_gradient> grads;
    for (std::size_t i = 0; i < lms.size(); ++i) grads.push_back({lms[i], out[i].pixel - target[i], 10 * wc[i]});
    const auto   analytic = backward(m, x, k, grads);
    const double h        = 1e-5;
    double       worst    = 0;
    for (int p = 0; p < code_dim; ++p) {
      semantic_code a = x, b = x;
      a.values[p] += h;
      b.values[p] -= h;
      const double fd = (loss(a) - loss(b)) / (2 * h);
      worst = std::max(worst, std::abs(fd - analytic[p]) / std::max(1.0, std::abs(analytic[p])));
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("image backward matches differences at fixed coverage") {
  const auto& m = default_model();
  const auto  k = canonical_setup_for(m).intrinsics;
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g;
  const auto x    = random_code(rng, m, 0.5);
  const auto base = render(m, x, k);
  rgb_image  w(k.width, k.height);
  for (auto& p : w.pixels) p = g(rng);
  auto loss = [&](const semantic_code& c) {
    const auto img = render_fixed_coverage(m, c, k, base);
    double     s   = 0;
    for (std::size_t i = 0; i < img.color.pixels.size(); ++i) s += w.pixels[i] * img.color.pixels[i];
    return s;
  };
  CHECK(render_fixed_coverage(m, x, k, base).color.pixels == base.color.pixels);
  const auto   analytic = backward_image(m, x, k, base, w);
  const double h        = 1e-5;
  double       worst    = 0;
  for (int p = 0; p < code_dim; p += 3) {
    semantic_code a = x, b = x;
    a.values[p] += h;
    b.values[p] -= h;
    const double fd = (loss(a) - loss(b)) / (2 * h);
    worst = std::max(worst, std::abs(fd - analytic[p]) / std::max(1.0, std::abs(analytic[p])));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("normalized render ignores the rendering block and global pose") {
  const auto& m = default_model();
  std::mt19937_64 rng(9);
  auto a = random_code(rng, m, 0.5);
  auto b = random_code(rng, m, 0.5);
  b.geometry() = a.geometry();
  b.theta()[3 * joint_global + 1] += 0.8;  // large yaw
  CHECK(normalize_render(m, a).color.pixels == normalize_render(m, b).color.pixels);
}

TEST_CASE("normalized mean face is frontal, centred and golden") {
  const auto&   m = default_model();
  semantic_code x;
  x.theta()[3 * joint_global + 1] = 1.2;
  const auto img = normalize_render(m, x);
  const auto box = coverage_box(img);
  CHECK(std::abs(0.5 * (box.x0 + box.x1 + 1) - 120.0) <= 2.0);
  CHECK(std::abs(0.5 * (box.y0 + box.y1 + 1) - 120.0) <= 2.0);
  const double height = box.y1 - box.y0 + 1;
  CHECK(height > 0.7 * 240);
  CHECK(height < 0.95 * 240);
  check_golden("golden_normalized_mean.hash", craniofit::testing::image_hash(img.color));
}

TEST_CASE("normalize_render_backward matches differences") {
  const auto& m = default_model();
  std::mt19937_64 rng(10);
  std::normal_distribution<double> g;
  const auto      x    = random_code(rng, m, 0.5);
  const Eigen::VectorXd geo = x.geometry();
  const auto      base = normalize_render_geometry(m, geo);
  rgb_image       w(base.width(), base.height());
  for (auto& p : w.pixels) p = g(rng);
  const auto setup = canonical_setup_for(m);
  auto loss = [&](const Eigen::VectorXd& gg) {
    const auto img = render_fixed_coverage(m, canonical_code(m, gg), setup.intrinsics, base);
    double     s   = 0;
    for (std::size_t i = 0; i < img.color.pixels.size(); ++i) s += w.pixels[i] * img.color.pixels[i];
    return s;
  };
  const auto analytic = normalize_render_backward(m, geo, base, w);
  double     worst    = 0;
  for (int p = 0; p < geometry_dim; p += 2) {
    Eigen::VectorXd a = geo, b = geo;
    a[p] += 1e-5;
    b[p] -= 1e-5;
    const double fd = (loss(a) - loss(b)) / 2e-5;
    worst = std::max(worst, std::abs(fd - analytic[p]) / std::max(1.0, std::abs(analytic[p])));
  }
  CHECK(worst < 1e-4);
  CHECK(analytic.segment<3>(semantic_code::theta_offset).isZero(0.0));
}

TEST_CASE("rotating world and camera together leaves the image unchanged") {
  const auto& m = default_model();
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g;
  const auto k = canonical_setup_for(m).intrinsics;
  for (int trial = 0; trial < 3; ++trial) {
    auto       x   = random_code(rng, m, 0.5);
    const mat3 rot = rodrigues(vec3(g(rng), g(rng), g(rng)));
    // bake the posed face into a rigid model, then rotate that model
    face_model posed = sphere_model(1.0, 0);
    posed.mean_shape = evaluate(m, x.geometry());
    const int n      = posed.vertex_count();
    posed.shape_basis      = Eigen::MatrixXd::Zero(3 * n, shape_dim);
    posed.expression_basis = Eigen::MatrixXd::Zero(3 * n, expression_dim);
    posed.skinning_weights = Eigen::MatrixXd::Zero(n, joint_count);
    posed.skinning_weights.col(joint_global).setOnes();
    face_model rotated = posed;
    for (auto& v : rotated.mean_shape.vertices) v = rot * v;

    semantic_code a = x, b = x;
    a.geometry().setZero();
    b.geometry().setZero();
    b.camera_rotation()    = rotation_log(rot * rodrigues(x.camera_rotation()));
    b.camera_translation() = rot * x.camera_translation();
    const auto ia = render(posed, a, k), ib = render(rotated, b, k);
    std::size_t differing = 0;
    for (std::size_t i = 0; i < ia.coverage.size(); ++i) {
      bool same = ia.coverage[i] == ib.coverage[i];
      for (int ch = 0; ch < 3 && same; ++ch) same = std::abs(ia.color.pixels[3 * i + ch] - ib.color.pixels[3 * i + ch]) < 1e-6;
      differing += !same;
    }
    CHECK(differing <= ia.coverage.size() / 200);
  }
}

TEST_CASE("image files round trip") {
  rgb_image img(5, 4);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<double>(i % 256) / 255.0;
  const std::string path = "/tmp/craniofit_test.ppm";
  write_ppm(img, path);
  const auto r = read_ppm(path);
  CHECK(r.width == 5);
  CHECK(r.height == 4);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) CHECK(std::abs(r.pixels[i] - img.pixels[i]) < 1e-12);
  mask_image mask(3, 3, 1);
  mask.at(1, 1) = 0;
  write_pgm(mask, "/tmp/craniofit_test.pgm");
  CHECK(read_pgm("/tmp/craniofit_test.pgm").values == mask.values);
}
