#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "test_support.hpp"

#include "craniofit/error.hpp"
#include "craniofit/inpainting.hpp"
#include "craniofit/population.hpp"
#include "craniofit/segmentation.hpp"

using namespace craniofit;
using craniofit::testing::default_model;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("craniofit_inp_" + name)).string();
}

struct scene {
  face_population            population;
  std::vector<semantic_code> training;
  reference_pair             gan;
  segmentation               seg;
  tissue_table               depths;
  semantic_code              truth;
  mesh                       truth_face;
  skull_annotation           skull;
};

const scene& shared_scene() {
  static const scene s = [] {
    scene            out;
    const auto&      model = default_model();
    std::mt19937_64  rng(5);
    out.population = face_population::make(17, default_latent_dim);
    for (int i = 0; i < 64; ++i) out.training.push_back(out.population.sample(model, rng));
    out.gan        = reference_gan(model, out.training, default_latent_dim, 3);
    out.seg        = template_segmentation(model);
    out.depths     = placeholder_tissue_table();
    std::mt19937_64 truth_rng(99);
    out.truth      = out.population.sample(model, truth_rng);
    out.truth_face = evaluate(model, out.truth.geometry());
    out.skull      = synthesize_skull(out.truth_face, model, out.depths, out.seg.definite_vertices());
    return out;
  }();
  return s;
}

inpaint_problem problem_for(const semantic_code& candidate) {
  const auto& s    = shared_scene();
  const auto& m    = default_model();
  const auto  sup  = superimpose(evaluate(m, candidate.geometry()), m, s.skull, s.depths, alignment::identity());
  const auto  mask = build_mask(m, candidate, select_unmatched_regions(s.seg, sup), s.seg);
  inpaint_problem p;
  p.y           = mask.y.color;
  p.B           = mask.B;
  p.constraints = make_geometry_constraints(s.skull, s.depths, s.seg);
  return p;
}

mask_image random_mask(std::mt19937_64& rng, int w, int h, double known) {
  std::bernoulli_distribution bit(known);
  mask_image                  B(w, h);
  for (auto& b : B.values) b = bit(rng) ? 1 : 0;
  return B;
}

rgb_image random_image(std::mt19937_64& rng, int w, int h) {
  std::uniform_real_distribution<double> u(0, 1);
  rgb_image                              img(w, h);
  for (auto& v : img.pixels) v = u(rng);
  return img;
}

superimposition_result rows_with(const std::map<int, bool>& matched) {
  superimposition_result r;
  for (const auto& [id, ok] : matched) {
    landmark_match m;
    m.id      = id;
    m.matched = ok;
    r.rows.push_back(m);
    (ok ? r.matched : r.unmatched)++;
  }
  return r;
}

}  // namespace

TEST_CASE("template segmentation covers the model") {
  const auto& m   = default_model();
  const auto  seg = template_segmentation(m);
  CHECK(seg.labels.size() == static_cast<std::size_t>(m.vertex_count()));
  std::map<int, int> owners;
  for (const auto& [r, ids] : seg.region_landmarks)
    for (int id : ids) owners[id]++;
  for (const auto& [id, v] : m.anthropometric_map) {
    CHECK(owners[id] == 1);
    CHECK(seg.labels[v] == seg.region_of_landmark(id));
  }
  const auto definite = seg.definite_vertices();
  int        count    = 0;
  for (bool d : definite) count += d;
  CHECK(count > 0);
  CHECK(seg.region(0).definite);
  CHECK(seg.region(1).definite);
  CHECK_FALSE(seg.region(2).definite);
  CHECK_THROWS_AS(seg.region_of_landmark(99), error);
}

TEST_CASE("segmentation files round trip and report bad lines") {
  const auto& m    = default_model();
  const auto  seg  = template_segmentation(m);
  const auto  path = temp_path("seg.txt");
  write_segmentation(seg, path);
  const auto back = read_segmentation(path, m);
  CHECK(back.labels == seg.labels);
  CHECK(back.region_landmarks == seg.region_landmarks);
  CHECK(back.topology_id == seg.topology_id);

  std::ofstream(path) << "topology " << seg.topology_id << "\nregion 0 all 1\nlabels\n0\nx\n";
  try {
    read_segmentation(path, m);
    FAIL("expected a parse error");
  } catch (const error& e) {
    CHECK(e.kind() == error_kind::parse);
    CHECK(std::string(e.what()).find(":5") != std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST_CASE("region selection") {
  const auto& m   = default_model();
  const auto  seg = template_segmentation(m);
  std::map<int, bool> flags;
  for (const auto& [id, v] : m.anthropometric_map) flags[id] = true;
  CHECK(select_unmatched_regions(seg, rows_with(flags)).empty());

  auto one       = flags;
  one[24]        = false;  // right eye corner
  const int eye  = seg.region_of_landmark(24);
  CHECK(select_unmatched_regions(seg, rows_with(one)) == std::set<int>{eye});

  auto stray = flags;
  stray[99]  = false;
  CHECK_THROWS_AS(select_unmatched_regions(seg, rows_with(stray)), error);

  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    std::bernoulli_distribution bit(0.3 + 0.03 * trial);
    for (auto& [id, ok] : flags) ok = !bit(rng);
    const auto sup = rows_with(flags);
    std::set<int> any, majority;
    for (const auto& [region, ids] : seg.region_landmarks) {
      int bad = 0;
      for (int id : ids) bad += flags.at(id) ? 0 : 1;
      if (bad >= 1) any.insert(region);
      if (bad * 2 > static_cast<int>(ids.size())) majority.insert(region);
    }
    CHECK(select_unmatched_regions(seg, sup, removal_policy::any) == any);
    CHECK(select_unmatched_regions(seg, sup, removal_policy::majority) == majority);
  }
}

TEST_CASE("mask construction") {
  const auto& m    = default_model();
  const auto  seg  = template_segmentation(m);
  const auto  code = canonical_code(m, Eigen::VectorXd::Zero(geometry_dim));

  const auto none = build_mask(m, code, {}, seg);
  for (auto b : none.B.values) CHECK(b == 1);

  const auto all = build_mask(m, code, seg.region_ids(), seg);
  for (std::size_t p = 0; p < all.B.values.size(); ++p) CHECK(all.B.values[p] == (all.y.coverage[p] < 0 ? 1 : 0));

  // Independent pass: rasterize removal flags as colours, count full-flag pixels.
  const int  nose     = seg.region_of_landmark(3);
  const auto partial  = build_mask(m, code, {nose}, seg);
  const auto flags    = seg.vertices_in({nose});
  const auto setup    = canonical_setup_for(m);
  const auto frame    = forward_frame(m, code, setup.intrinsics);
  std::vector<vec3> colours(flags.size());
  for (std::size_t v = 0; v < flags.size(); ++v) colours[v] = vec3::Constant(flags[v] ? 1.0 : 0.0);
  const auto flat = rasterize(frame.screen, frame.depth, colours, frame.posed.triangles, setup.intrinsics.width,
      setup.intrinsics.height);
  std::size_t expected = 0, masked = 0;
  for (std::size_t p = 0; p < flat.coverage.size(); ++p) {
    if (flat.coverage[p] >= 0 && flat.color.pixels[3 * p] > 1 - 1e-9) ++expected;
  }
  for (auto b : partial.B.values) masked += b == 0;
  CHECK(masked > 0);
  CHECK(masked == expected);
}

TEST_CASE("importance weights") {
  mask_image full(9, 7, 1);
  for (double w : importance_weights(full, 7)) CHECK(w == 0);

  mask_image holes(5, 5, 1);
  holes.at(1, 1) = holes.at(2, 1) = holes.at(3, 1) = holes.at(1, 2) = 0;
  CHECK(importance_weights(holes, 3)[2 * 5 + 2] == 0.5);

  CHECK_THROWS_AS(importance_weights(full, 4), error);
  CHECK_THROWS_AS(importance_weights(full, 1), error);

  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const auto B = random_mask(rng, 23, 17, 0.6 + 0.03 * trial);
    const auto W = importance_weights(B, 7);
    for (int y = 0; y < B.height; ++y) {
      for (int x = 0; x < B.width; ++x) {
        double num = 0, den = 0;
        for (int j = 0; j < B.height; ++j) {
          for (int i = 0; i < B.width; ++i) {
            if (std::abs(i - x) > 3 || std::abs(j - y) > 3 || (i == x && j == y)) continue;
            den += 1;
            num += 1 - B.at(i, j);
          }
        }
        const double expect = B.at(x, y) ? num / den : 0.0;
        const double got    = W[y * B.width + x];
        CHECK(got == expect);
        if (!B.at(x, y) || num == 0) CHECK(got == 0);
      }
    }
  }
}

TEST_CASE("context loss") {
  std::mt19937_64 rng(2);
  const auto      y = random_image(rng, 6, 5);
  std::vector<double> W(30, 0.0);
  W[7] = 0.5;
  CHECK(context_loss(y, y, W) == 0);
  auto g = y;
  for (int c = 0; c < 3; ++c) g.pixels[7 * 3 + c] += 0.2;
  CHECK(context_loss(g, y, W) == doctest::Approx(0.3).epsilon(1e-12));

  // Differences under zero weight do not count.
  auto hidden = y;
  hidden.pixels[0] += 0.4;
  CHECK(context_loss(hidden, y, W) == 0);

  CHECK_THROWS_AS(context_loss(rgb_image(5, 5), y, W), error);

  for (int trial = 0; trial < 100; ++trial) {
    const auto a = random_image(rng, 11, 9), b = random_image(rng, 11, 9);
    std::vector<double> w(99);
    std::uniform_real_distribution<double> u(0, 1);
    for (auto& v : w) v = u(rng) < 0.3 ? 0.0 : u(rng);
    double naive = 0;
    for (int yy = 0; yy < 9; ++yy)
      for (int xx = 0; xx < 11; ++xx)
        for (int c = 0; c < 3; ++c) naive += w[yy * 11 + xx] * std::abs(a.at(xx, yy, c) - b.at(xx, yy, c));
    rgb_image grad;
    const double got = context_loss(a, b, w, &grad);
    CHECK(got >= 0);
    CHECK(std::abs(got - naive) < 1e-10);
  }
}

TEST_CASE("prior loss") {
  CHECK(prior_loss(0.5, 1.0) == doctest::Approx(std::log(0.5)).epsilon(1e-14));
  CHECK(prior_loss(0.5, 1.0) == doctest::Approx(-0.6931).epsilon(1e-4));
  CHECK(prior_loss(0.9, 0.0) == 0);
  CHECK(prior_loss(0.9, 1.0) < prior_loss(0.2, 1.0));
  for (double bad : {0.0, 1.0, -0.1, 1.5, std::nan("")}) {
    try {
      prior_loss(bad, 1.0);
      FAIL("expected a contract violation");
    } catch (const error& e) {
      CHECK(e.kind() == error_kind::contract);
    }
  }

  const auto& s    = shared_scene();
  const auto  mean = s.gan.generator->generate(Eigen::VectorXd::Zero(default_latent_dim)).color;
  auto        noisy = mean;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  for (auto& v : noisy.pixels) v = u(rng);
  CHECK(prior_loss(s.gan.discriminator->score(mean), 0.1) < prior_loss(s.gan.discriminator->score(noisy), 0.1));
}

TEST_CASE("geometry loss") {
  const auto& m    = default_model();
  const auto  face = evaluate(m, Eigen::VectorXd::Zero(geometry_dim));

  geometry_constraints at_face;
  for (int id : {1, 5, 12}) at_face.landmarks[id] = face.vertices[m.anthropometric_map.at(id)];
  CHECK(geometry_loss(face, m, at_face, 1.0) == 0);

  geometry_constraints one;
  one.landmarks[9] = face.vertices[m.anthropometric_map.at(9)] + vec3(0, 3, 0);
  CHECK(geometry_loss(face, m, one, 2.0) == doctest::Approx(6.0).epsilon(1e-14));

  geometry_constraints unknown;
  unknown.landmarks[77] = vec3::Zero();
  CHECK_THROWS_AS(geometry_loss(face, m, unknown, 1.0), error);
  CHECK_THROWS_AS(geometry_loss(face, m, geometry_constraints{}, 1.0), error);

  const auto&     s = shared_scene();
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 100; ++trial) {
    geometry_constraints c;
    for (const auto& [id, v] : m.anthropometric_map)
      if (g(rng) > 0) c.landmarks[id] = face.vertices[v] + 4.0 * vec3(g(rng), g(rng), g(rng));
    if (c.landmarks.empty()) c.landmarks[1] = vec3::Zero();
    if (trial % 4 == 0) {
      c.definite_surface = std::make_shared<offset_surface>(s.skull.skull, 5.5);
      for (int k = 0; k < 30; ++k) c.definite_vertices.push_back(static_cast<int>(rng() % m.vertex_count()));
    }
    const double lambda = 0.5 + trial * 0.01;
    double       naive  = 0;
    for (const auto& [id, p] : c.landmarks) naive += (face.vertices[m.anthropometric_map.at(id)] - p).norm();
    for (int v : c.definite_vertices) naive += std::abs(c.definite_surface->signed_distance(face.vertices[v]));
    CHECK(std::abs(geometry_loss(face, m, c, lambda) - lambda * naive) < 1e-10 * std::max(1.0, naive));
  }
}

TEST_CASE("geometry loss vertex gradients match differences") {
  const auto& m = default_model();
  const auto& s = shared_scene();
  std::mt19937_64 rng(12);
  std::normal_distribution<double> g;
  // Vertices a little off the offset surface, away from its medial axis.
  auto face = s.truth_face;
  for (auto& v : face.vertices) v += 0.5 * vec3(g(rng), g(rng), g(rng));
  geometry_constraints c;
  for (int id : {2, 9, 14, 33}) c.landmarks[id] = face.vertices[m.anthropometric_map.at(id)] + vec3(g(rng), g(rng), g(rng));
  c.definite_surface = std::make_shared<offset_surface>(s.skull.skull, s.depths.at(1).depth);
  const auto definite = s.seg.definite_vertices();
  for (int v = 0; v < m.vertex_count() && c.definite_vertices.size() < 40; v += 7)
    if (definite[v]) c.definite_vertices.push_back(v);
  std::vector<vertex_gradient> grads;
  geometry_loss(face, m, c, 1.5, &grads);
  std::map<int, vec3> by_vertex;
  for (const auto& vg : grads) {
    auto [it, fresh] = by_vertex.try_emplace(vg.vertex, vec3::Zero());
    it->second += vg.gradient;
  }
  for (const auto& [v, grad] : by_vertex) {
    for (int d = 0; d < 3; ++d) {
      auto plus = face, minus = face;
      plus.vertices[v][d] += 1e-6;
      minus.vertices[v][d] -= 1e-6;
      const double fd = (geometry_loss(plus, m, c, 1.5) - geometry_loss(minus, m, c, 1.5)) / 2e-6;
      INFO("vertex " << v << " axis " << d << " fd " << fd << " analytic " << grad[d]);
      CHECK(std::abs(fd - grad[d]) < 1e-6);
    }
  }
}

TEST_CASE("reference generator and discriminator") {
  const auto& m = default_model();
  const auto& s = shared_scene();
  const auto& G = *s.gan.generator;
  const auto& D = *s.gan.discriminator;

  Eigen::VectorXd mean = Eigen::VectorXd::Zero(geometry_dim);
  for (const auto& c : s.training) mean += c.geometry();
  mean /= static_cast<double>(s.training.size());
  const auto at_zero = G.generate(Eigen::VectorXd::Zero(default_latent_dim));
  CHECK((G.code(Eigen::VectorXd::Zero(default_latent_dim)) - mean).norm() < 1e-12);
  const auto direct = normalize_render_geometry(m, mean);
  CHECK(at_zero.coverage == direct.coverage);
  double worst = 0;
  for (std::size_t i = 0; i < direct.color.pixels.size(); ++i)
    worst = std::max(worst, std::abs(direct.color.pixels[i] - at_zero.color.pixels[i]));
  CHECK(worst < 1e-9);

  // Training faces lie in the generator's span.
  for (int i = 0; i < 5; ++i) {
    const auto z = G.latent_of(s.training[i].geometry());
    CHECK((G.code(z) - s.training[i].geometry()).norm() < 1e-9);
  }

  Eigen::VectorXd far = Eigen::VectorXd::Zero(default_latent_dim);
  far[0]              = 10;
  const double d_train = D.score(G.generate(G.latent_of(s.training[0].geometry())).color);
  const double d_far   = D.score(G.generate(far).color);
  CHECK(d_train > 0);
  CHECK(d_train < 1);
  CHECK(d_far > 0);
  CHECK(d_train > d_far);

  // Discriminator image gradient against differences.
  auto       img  = G.generate(G.latent_of(s.training[1].geometry())).color;
  const auto grad = D.gradient(img);
  std::mt19937_64 rng(1);
  for (int k = 0; k < 10; ++k) {
    const std::size_t i    = rng() % img.pixels.size();
    const double      keep = img.pixels[i];
    img.pixels[i]          = keep + 1e-4;
    const double plus      = D.score(img);
    img.pixels[i]          = keep - 1e-4;
    const double minus     = D.score(img);
    img.pixels[i]          = keep;
    CHECK(std::abs((plus - minus) / 2e-4 - grad.pixels[i]) < 1e-8);
  }
}

TEST_CASE("reference pair rejects bad training sets") {
  const auto& m = default_model();
  const auto& s = shared_scene();
  std::vector<semantic_code> few(s.training.begin(), s.training.begin() + 19);
  CHECK_THROWS_AS(reference_gan(m, few, 8), error);
  CHECK_THROWS_AS(reference_gan(m, s.training, 196), error);
  CHECK_THROWS_AS(reference_gan(m, s.training, 0), error);

  const auto      narrow = face_population::make(3, 5);
  std::mt19937_64 rng(1);
  std::vector<semantic_code> flat;
  for (int i = 0; i < 40; ++i) flat.push_back(narrow.sample(m, rng));
  try {
    reference_gan(m, flat, 8);
    FAIL("expected a rank error");
  } catch (const error& e) {
    CHECK(std::string(e.what()).find("rank-deficient") != std::string::npos);
  }
}

TEST_CASE("total loss gradient matches central differences") {
  const auto& m = default_model();
  const auto& s = shared_scene();
  std::mt19937_64 rng(21);
  auto problem = problem_for(s.population.sample(m, rng));
  problem.settings.lambda_p = 0.7;
  const inpaint_objective objective(problem, *s.gan.generator, *s.gan.discriminator, m);
  for (int trial = 0; trial < 3; ++trial) {
    const auto z = initial_latent(default_latent_dim, 100 + trial);
    CHECK(inpaint_gradient_error(objective, *s.gan.generator, z) < 1e-4);
  }
}

TEST_CASE("problem validation") {
  const auto& m = default_model();
  const auto& s = shared_scene();
  std::mt19937_64 rng(22);
  auto p = problem_for(s.population.sample(m, rng));
  CHECK_NOTHROW(p.validate(m));
  auto bad = p;
  bad.settings.window = 6;
  CHECK_THROWS_AS(bad.validate(m), error);
  bad = p;
  bad.settings.lambda_2 = -1;
  CHECK_THROWS_AS(bad.validate(m), error);
  bad = p;
  bad.B = mask_image(3, 3);
  CHECK_THROWS_AS(bad.validate(m), error);
}

TEST_CASE("solve is deterministic and monotone") {
  const auto& m = default_model();
  const auto& s = shared_scene();
  std::mt19937_64 rng(31);
  auto p = problem_for(s.population.sample(m, rng));
  p.settings.optimizer.max_iters = 15;
  const auto a = solve(p, *s.gan.generator, *s.gan.discriminator, m);
  const auto b = solve(p, *s.gan.generator, *s.gan.discriminator, m);
  REQUIRE(a.trace.size() == b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    CHECK(a.trace[i].total() == b.trace[i].total());
    if (i > 0) CHECK(a.trace[i].total() <= a.trace[i - 1].total());
  }
  CHECK(a.z == b.z);
}

TEST_CASE("known face with nothing missing stays consistent") {
  const auto& m = default_model();
  const auto& s = shared_scene();
  inpaint_problem p;
  p.y           = normalize_render(m, s.truth).color;
  p.B           = mask_image(p.y.width, p.y.height, 1);
  p.constraints = make_geometry_constraints(s.skull, s.depths, s.seg);
  p.settings.optimizer.max_iters = 30;
  const auto r = solve(p, *s.gan.generator, *s.gan.discriminator, m);
  CHECK(r.final_terms.geometry <= r.trace.front().geometry);
  CHECK(r.final_terms.context <= r.trace.front().context);
  CHECK(r.final_terms.geometry < 1e-6);
}

TEST_CASE("mismatched candidate is re-synthesized onto the skull") {
  const auto& m = default_model();
  const auto& s = shared_scene();
  std::mt19937_64 rng(41);
  const auto candidate = s.population.sample(m, rng);
  const auto before    = superimpose(evaluate(m, candidate.geometry()), m, s.skull, s.depths, alignment::identity());
  CHECK(before.score < 1.0);
  const auto r     = solve(problem_for(candidate), *s.gan.generator, *s.gan.discriminator, m);
  const auto after = superimpose(r.face, m, s.skull, s.depths, alignment::identity());
  CHECK(r.final_terms.geometry < 1e-6);
  CHECK(after.score == 1.0);
  double worst = 0;
  for (int v : frontal_vertices(m)) worst = std::max(worst, (r.face.vertices[v] - s.truth_face.vertices[v]).norm());
  CHECK(worst < 1e-6);
}

TEST_CASE("problem bundle and trace files") {
  const auto& m = default_model();
  const auto& s = shared_scene();
  std::mt19937_64 rng(51);
  auto p = problem_for(s.population.sample(m, rng));
  p.settings.lambda_p = 0.25;
  p.settings.seed     = 12345678901234ull;
  const auto dir = temp_path("bundle");
  write_problem_bundle(p, dir);
  const auto q = read_problem_bundle(dir);
  CHECK(q.B.values == p.B.values);
  CHECK(q.y.width == p.y.width);
  for (std::size_t i = 0; i < p.y.pixels.size(); ++i) CHECK(std::abs(q.y.pixels[i] - p.y.pixels[i]) <= 0.5 / 255 + 1e-12);
  CHECK(q.settings.lambda_p == 0.25);
  CHECK(q.settings.seed == p.settings.seed);
  CHECK(q.settings.window == p.settings.window);
  CHECK(q.constraints.landmarks == p.constraints.landmarks);
  CHECK(q.constraints.definite_vertices == p.constraints.definite_vertices);
  REQUIRE(q.constraints.definite_surface);
  const vec3 probe(3, -70, -80);
  CHECK(std::abs(q.constraints.definite_surface->signed_distance(probe) -
                 p.constraints.definite_surface->signed_distance(probe)) < 1e-9);

  std::ofstream(std::filesystem::path(dir) / "settings.txt", std::ios::app) << "mystery=1\n";
  CHECK_THROWS_AS(read_problem_bundle(dir), error);
  std::filesystem::remove_all(dir);

  const auto trace_path = temp_path("trace.csv");
  write_loss_trace({{1, -0.5, 2}, {0.5, -0.25, 0}}, trace_path);
  std::ifstream in(trace_path);
  std::string   header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header == "iter,total,Lc,Lp,Lg");
  CHECK(row == "0,2.5,1,-0.5,2");
  std::filesystem::remove(trace_path);
}
