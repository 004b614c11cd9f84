#include "craniofit/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "craniofit/error.hpp"

namespace craniofit {

namespace {

constexpr double sh_k0 = 0.282094791773878;  // 1 / (2 sqrt(pi))
constexpr double sh_k1 = 0.488602511902920;  // sqrt(3 / (4 pi))
constexpr double sh_k2 = 1.092548430592079;  // sqrt(15 / (4 pi))
constexpr double sh_k3 = 0.315391565252520;  // sqrt(5 / (16 pi))
constexpr double sh_k4 = 0.546274215296040;  // sqrt(15 / (16 pi))

constexpr double min_depth = 1e-6;
constexpr double inf       = std::numeric_limits<double>::infinity();

double orient(const vec2& a, const vec2& b, const vec2& c) {
  return (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
}

// Accumulates g * d orient(a, b, c) into ga, gb, gc.
void orient_backward(const vec2& a, const vec2& b, const vec2& c, double g,
    vec2& ga, vec2& gb, vec2& gc) {
  const vec2 db(c.y() - a.y(), -(c.x() - a.x()));
  const vec2 dc(-(b.y() - a.y()), b.x() - a.x());
  gb += g * db;
  gc += g * dc;
  ga -= g * (db + dc);
}

vec3 shade_unchecked(const vec3& n, const Eigen::Ref<const Eigen::VectorXd>& gamma, double r) {
  const auto h = sh_basis(n);
  vec3       c;
  for (int ch = 0; ch < 3; ++ch) {
    double s = 0;
    for (int b = 0; b < sh_coefficients; ++b) s += gamma[ch * sh_coefficients + b] * h[b];
    c[ch] = r * s;
  }
  return c;
}

struct barycentric {
  std::array<double, 3> w;
  double                area;
};

barycentric barycentric_at(const vec2& p, const vec2& a, const vec2& b, const vec2& c) {
  const double area = orient(a, b, c);
  return {{orient(b, c, p) / area, orient(c, a, p) / area, orient(a, b, p) / area}, area};
}

vec2 pixel_centre(int x, int y) { return {x + 0.5, y + 0.5}; }

}  // namespace

void camera_intrinsics::validate() const {
  if (!(focal > 0) || !std::isfinite(focal)) throw_invalid("camera focal must be positive");
  if (width <= 0 || height <= 0) throw_invalid("camera image size must be positive");
  if (!principal_point.allFinite()) throw_invalid("camera principal point must be finite");
}

projection project(const camera& cam, const vec3& p) {
  const vec3 xc = rodrigues(cam.rotation).transpose() * (p - cam.translation);
  if (!(xc.z() > 0)) throw_invalid("point projects behind the camera (depth " + std::to_string(xc.z()) + ")");
  return {cam.intrinsics.principal_point + cam.intrinsics.focal * vec2(xc.x() / xc.z(), xc.y() / xc.z()), xc.z()};
}

std::array<double, sh_coefficients> sh_basis(const vec3& n) {
  const double x = n.x(), y = n.y(), z = n.z();
  return {sh_k0,
      sh_k1 * y,
      sh_k1 * z,
      sh_k1 * x,
      sh_k2 * x * y,
      sh_k2 * y * z,
      sh_k3 * (3 * z * z - 1),
      sh_k2 * x * z,
      sh_k4 * (x * x - y * y)};
}

std::array<vec3, sh_coefficients> sh_basis_gradient(const vec3& n) {
  const double x = n.x(), y = n.y(), z = n.z();
  return {vec3::Zero(),
      vec3(0, sh_k1, 0),
      vec3(0, 0, sh_k1),
      vec3(sh_k1, 0, 0),
      sh_k2 * vec3(y, x, 0),
      sh_k2 * vec3(0, z, y),
      vec3(0, 0, 6 * sh_k3 * z),
      sh_k2 * vec3(z, 0, x),
      sh_k4 * vec3(2 * x, -2 * y, 0)};
}

vec3 shade(const vec3& normal, const Eigen::Ref<const Eigen::VectorXd>& gamma, double reflectance) {
  if (gamma.size() != gamma_dim) throw_invalid("illumination needs 27 coefficients");
  if (std::abs(normal.norm() - 1.0) > 1e-6) throw_invalid("shade: normal is not unit length");
  return shade_unchecked(normal, gamma, reflectance);
}

std::size_t rendered_image::covered_pixel_count() const {
  return static_cast<std::size_t>(std::count_if(coverage.begin(), coverage.end(), [](int t) { return t >= 0; }));
}

rendered_image rasterize(std::span<const vec2> screen, std::span<const double> depth,
    std::span<const vec3> colors, std::span<const tri> triangles, int width, int height) {
  rendered_image out;
  out.color = rgb_image(width, height);
  out.depth.assign(static_cast<std::size_t>(width) * height, inf);
  out.coverage.assign(static_cast<std::size_t>(width) * height, -1);

  for (std::size_t t = 0; t < triangles.size(); ++t) {
    const auto& f = triangles[t];
    if (depth[f[0]] <= min_depth || depth[f[1]] <= min_depth || depth[f[2]] <= min_depth) continue;
    const vec2& a = screen[f[0]];
    const vec2& b = screen[f[1]];
    const vec2& c = screen[f[2]];
    const double area = orient(a, b, c);
    if (std::abs(area) < 1e-12) continue;

    const int x0 = std::max(0, static_cast<int>(std::floor(std::min({a.x(), b.x(), c.x()}) - 0.5)));
    const int x1 = std::min(width - 1, static_cast<int>(std::ceil(std::max({a.x(), b.x(), c.x()}) - 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min({a.y(), b.y(), c.y()}) - 0.5)));
    const int y1 = std::min(height - 1, static_cast<int>(std::ceil(std::max({a.y(), b.y(), c.y()}) - 0.5)));

    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const vec2   p  = pixel_centre(x, y);
        const double w0 = orient(b, c, p) / area;
        const double w1 = orient(c, a, p) / area;
        const double w2 = orient(a, b, p) / area;
        if (w0 < 0 || w1 < 0 || w2 < 0) continue;
        const double z = 1.0 / (w0 / depth[f[0]] + w1 / depth[f[1]] + w2 / depth[f[2]]);
        const std::size_t idx = static_cast<std::size_t>(y) * width + x;
        if (!(z < out.depth[idx])) continue;
        out.depth[idx]    = z;
        out.coverage[idx] = static_cast<int>(t);
        const vec3 col    = w0 * colors[f[0]] + w1 * colors[f[1]] + w2 * colors[f[2]];
        for (int ch = 0; ch < 3; ++ch) out.color.pixels[idx * 3 + ch] = std::clamp(col[ch], 0.0, 1.0);
      }
    }
  }
  return out;
}

render_frame forward_frame(const face_model& model, const semantic_code& code,
    const camera_intrinsics& intrinsics) {
  intrinsics.validate();
  if (code.values.size() != code_dim) throw_invalid("code must have 228 entries");
  if (!code.values.allFinite()) throw_invalid("code contains non-finite values");

  render_frame fr;
  fr.posed = evaluate(model, code.geometry());
  compute_vertex_normals(fr.posed.vertices, fr.posed.triangles, fr.normals);
  fr.camera_rotation = rodrigues_with_derivatives(code.camera_rotation());

  const mat3  rt = fr.camera_rotation.rotation.transpose();
  const vec3  t  = code.camera_translation();
  const auto  gamma = code.gamma();
  const int   n  = fr.posed.vertex_count();
  fr.screen.resize(n);
  fr.depth.resize(n);
  fr.colors.resize(n);
  for (int v = 0; v < n; ++v) {
    const vec3 xc = rt * (fr.posed.vertices[v] - t);
    fr.depth[v]   = xc.z();
    fr.screen[v]  = xc.z() > 0
        ? vec2(intrinsics.principal_point + intrinsics.focal * vec2(xc.x() / xc.z(), xc.y() / xc.z()))
        : vec2(std::nan(""), std::nan(""));
    fr.colors[v] = shade_unchecked(rt * fr.normals[v], gamma, default_reflectance);
  }
  return fr;
}

rendered_image render(const face_model& model, const semantic_code& code,
    const camera_intrinsics& intrinsics) {
  const auto fr = forward_frame(model, code, intrinsics);
  if (std::none_of(fr.depth.begin(), fr.depth.end(), [](double d) { return d > min_depth; })) {
    throw_invalid("render: mesh lies entirely behind the camera");
  }
  return rasterize(fr.screen, fr.depth, fr.colors, fr.posed.triangles, intrinsics.width, intrinsics.height);
}

rendered_image render_fixed_coverage(const face_model& model, const semantic_code& code,
    const camera_intrinsics& intrinsics, const rendered_image& coverage_source) {
  if (coverage_source.width() != intrinsics.width || coverage_source.height() != intrinsics.height) {
    throw_invalid("coverage source has a different image size");
  }
  const auto     fr = forward_frame(model, code, intrinsics);
  rendered_image out;
  out.color    = rgb_image(intrinsics.width, intrinsics.height);
  out.depth.assign(coverage_source.depth.size(), inf);
  out.coverage = coverage_source.coverage;
  for (int y = 0; y < intrinsics.height; ++y) {
    for (int x = 0; x < intrinsics.width; ++x) {
      const std::size_t idx = static_cast<std::size_t>(y) * intrinsics.width + x;
      const int         t   = out.coverage[idx];
      if (t < 0) continue;
      const auto& f  = fr.posed.triangles[t];
      const auto  bc = barycentric_at(pixel_centre(x, y), fr.screen[f[0]], fr.screen[f[1]], fr.screen[f[2]]);
      out.depth[idx] = 1.0 / (bc.w[0] / fr.depth[f[0]] + bc.w[1] / fr.depth[f[1]] + bc.w[2] / fr.depth[f[2]]);
      const vec3 col = bc.w[0] * fr.colors[f[0]] + bc.w[1] * fr.colors[f[1]] + bc.w[2] * fr.colors[f[2]];
      for (int ch = 0; ch < 3; ++ch) out.color.pixels[idx * 3 + ch] = std::clamp(col[ch], 0.0, 1.0);
    }
  }
  return out;
}

std::vector<vertex_output> forward_vertices(const face_model& model, const semantic_code& code,
    const camera_intrinsics& intrinsics, std::span<const int> vertices) {
  const auto fr = forward_frame(model, code, intrinsics);
  std::vector<vertex_output> out;
  out.reserve(vertices.size());
  for (int v : vertices) {
    if (v < 0 || v >= fr.posed.vertex_count()) throw_invalid("vertex index out of range: " + std::to_string(v));
    if (!(fr.depth[v] > 0)) throw_invalid("vertex " + std::to_string(v) + " projects behind the camera");
    out.push_back({fr.screen[v], fr.colors[v], fr.depth[v]});
  }
  return out;
}

std::vector<vec2> project_vertices(const face_model& model, const semantic_code& code,
    const camera_intrinsics& intrinsics, std::span<const int> vertices) {
  intrinsics.validate();
  const auto posed = evaluate_vertices(model, code.alpha(), code.delta(), code.theta(), vertices);
  camera     cam{intrinsics, code.camera_rotation(), code.camera_translation()};
  const mat3 rt = rodrigues(cam.rotation).transpose();
  std::vector<vec2> out;
  out.reserve(posed.size());
  for (std::size_t i = 0; i < posed.size(); ++i) {
    const vec3 xc = rt * (posed[i] - cam.translation);
    if (!(xc.z() > 0)) throw_invalid("vertex " + std::to_string(vertices[i]) + " projects behind the camera");
    out.emplace_back(intrinsics.principal_point + intrinsics.focal * vec2(xc.x() / xc.z(), xc.y() / xc.z()));
  }
  return out;
}

Eigen::VectorXd backward(const face_model& model, const semantic_code& code,
    const camera_intrinsics& intrinsics, std::span<const output_gradient> gradients) {
  intrinsics.validate();
  const int n = model.vertex_count();
  const bool needs_shading = std::any_of(gradients.begin(), gradients.end(),
      [](const output_gradient& g) { return !g.d_color.isZero(0.0); });

  std::vector<int> listed;
  for (const auto& g : gradients) {
    if (g.vertex < 0 || g.vertex >= n) throw_invalid("vertex index out of range: " + std::to_string(g.vertex));
    listed.push_back(g.vertex);
  }

  // Posed positions: full mesh when shading is involved, listed vertices otherwise.
  mesh              posed;
  std::vector<vec3> normals;
  std::vector<vec3> listed_positions;
  if (needs_shading) {
    posed = evaluate(model, code.geometry());
    compute_vertex_normals(posed.vertices, posed.triangles, normals);
  } else {
    listed_positions = evaluate_vertices(model, code.alpha(), code.delta(), code.theta(), listed);
  }

  const auto  rot   = rodrigues_with_derivatives(code.camera_rotation());
  const mat3& r     = rot.rotation;
  const mat3  rt    = r.transpose();
  const vec3  t     = code.camera_translation();
  const auto  gamma = code.gamma();
  const double f    = intrinsics.focal;

  Eigen::VectorXd grad = Eigen::VectorXd::Zero(code_dim);
  std::vector<vec3> grad_positions(needs_shading ? n : 0, vec3::Zero());
  std::vector<vec3> grad_normals(needs_shading ? n : 0, vec3::Zero());
  std::vector<vertex_gradient> sparse;

  for (std::size_t i = 0; i < gradients.size(); ++i) {
    const auto& g = gradients[i];
    const vec3  p = needs_shading ? posed.vertices[g.vertex] : listed_positions[i];
    const vec3  d = p - t;
    if (!g.d_pixel.isZero(0.0)) {
      const vec3 xc = rt * d;
      if (!(xc.z() > 0)) throw_invalid("vertex " + std::to_string(g.vertex) + " projects behind the camera");
      const double iz = 1.0 / xc.z();
      const vec3   g_xc(f * iz * g.d_pixel.x(), f * iz * g.d_pixel.y(),
          -f * iz * iz * (g.d_pixel.x() * xc.x() + g.d_pixel.y() * xc.y()));
      const vec3 g_p = r * g_xc;
      grad.segment<3>(semantic_code::translation_offset) -= g_p;
      for (int a = 0; a < 3; ++a) {
        grad[semantic_code::rotation_offset + a] += g_xc.dot(rot.d[a].transpose() * d);
      }
      if (needs_shading) grad_positions[g.vertex] += g_p;
      else sparse.push_back({g.vertex, g_p});
    }
    if (!g.d_color.isZero(0.0)) {
      const vec3& nw = normals[g.vertex];
      const vec3  nc = rt * nw;
      const auto  h  = sh_basis(nc);
      const auto  dh = sh_basis_gradient(nc);
      vec3        g_nc = vec3::Zero();
      for (int ch = 0; ch < 3; ++ch) {
        const double s = default_reflectance * g.d_color[ch];
        for (int b = 0; b < sh_coefficients; ++b) {
          grad[semantic_code::gamma_offset + ch * sh_coefficients + b] += s * h[b];
          g_nc += s * gamma[ch * sh_coefficients + b] * dh[b];
        }
      }
      grad_normals[g.vertex] += r * g_nc;
      for (int a = 0; a < 3; ++a) {
        grad[semantic_code::rotation_offset + a] += g_nc.dot(rot.d[a].transpose() * nw);
      }
    }
  }

  if (needs_shading) {
    vertex_normals_backward(posed.vertices, posed.triangles, grad_normals, grad_positions);
    for (int v = 0; v < n; ++v) {
      if (!grad_positions[v].isZero(0.0)) sparse.push_back({v, grad_positions[v]});
    }
  }
  grad.head<geometry_dim>() = geometry_vjp(model, code.geometry(), sparse);
  return grad;
}

Eigen::VectorXd backward_image(const face_model& model, const semantic_code& code,
    const camera_intrinsics& intrinsics, const rendered_image& base,
    const rgb_image& pixel_gradient) {
  if (pixel_gradient.width != base.width() || pixel_gradient.height != base.height() ||
      base.width() != intrinsics.width || base.height() != intrinsics.height) {
    throw_invalid("backward_image: image sizes differ");
  }
  const auto fr = forward_frame(model, code, intrinsics);
  const int  n  = fr.posed.vertex_count();
  std::vector<vec2> d_pixel(n, vec2::Zero());
  std::vector<vec3> d_color(n, vec3::Zero());

  for (int y = 0; y < base.height(); ++y) {
    for (int x = 0; x < base.width(); ++x) {
      const std::size_t idx = static_cast<std::size_t>(y) * base.width() + x;
      const int         t   = base.coverage[idx];
      if (t < 0) continue;
      vec3 g(pixel_gradient.pixels[idx * 3], pixel_gradient.pixels[idx * 3 + 1], pixel_gradient.pixels[idx * 3 + 2]);
      if (g.isZero(0.0)) continue;
      const auto& f  = fr.posed.triangles[t];
      const vec2& a  = fr.screen[f[0]];
      const vec2& b  = fr.screen[f[1]];
      const vec2& c  = fr.screen[f[2]];
      const vec2  p  = pixel_centre(x, y);
      const auto  bc = barycentric_at(p, a, b, c);
      const vec3  col = bc.w[0] * fr.colors[f[0]] + bc.w[1] * fr.colors[f[1]] + bc.w[2] * fr.colors[f[2]];
      for (int ch = 0; ch < 3; ++ch) {
        if (col[ch] < 0.0 || col[ch] > 1.0) g[ch] = 0.0;
      }
      std::array<double, 3> dw{};
      for (int k = 0; k < 3; ++k) {
        d_color[f[k]] += bc.w[k] * g;
        dw[k] = g.dot(fr.colors[f[k]]);
      }
      // w_k = E_k / A with E_0 = orient(b,c,p), E_1 = orient(c,a,p), E_2 = orient(a,b,p).
      const double dA = -(dw[0] * bc.w[0] + dw[1] * bc.w[1] + dw[2] * bc.w[2]) / bc.area;
      vec2 ga = vec2::Zero(), gb = vec2::Zero(), gc = vec2::Zero(), gp = vec2::Zero();
      orient_backward(b, c, p, dw[0] / bc.area, gb, gc, gp);
      orient_backward(c, a, p, dw[1] / bc.area, gc, ga, gp);
      orient_backward(a, b, p, dw[2] / bc.area, ga, gb, gp);
      orient_backward(a, b, c, dA, ga, gb, gc);
      d_pixel[f[0]] += ga;
      d_pixel[f[1]] += gb;
      d_pixel[f[2]] += gc;
    }
  }

  std::vector<output_gradient> grads;
  for (int v = 0; v < n; ++v) {
    if (!d_pixel[v].isZero(0.0) || !d_color[v].isZero(0.0)) grads.push_back({v, d_pixel[v], d_color[v]});
  }
  if (grads.empty()) return Eigen::VectorXd::Zero(code_dim);
  return backward(model, code, intrinsics, grads);
}

canonical_setup canonical_setup_for(const face_model& model) {
  constexpr int    size     = 240;
  constexpr double distance = 600.0;
  constexpr double coverage = 0.8;

  vec3 lo = vec3::Constant(inf), hi = vec3::Constant(-inf);
  for (const auto& v : model.mean_shape.vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  const double extent = std::max(hi.x() - lo.x(), hi.y() - lo.y());
  if (!(extent > 0)) throw_invalid("mean shape has zero extent");

  canonical_setup s;
  s.intrinsics.width           = size;
  s.intrinsics.height          = size;
  s.intrinsics.principal_point = vec2(size / 2.0, size / 2.0);
  s.intrinsics.focal           = coverage * size * distance / extent;
  s.rotation                   = vec3::Zero();
  s.translation                = vec3(0, 0, -distance);
  // White light: ambient band 0 plus a key light from the camera side,
  // slightly above and to the image left.
  s.gamma = Eigen::VectorXd::Zero(gamma_dim);
  for (int ch = 0; ch < 3; ++ch) {
    s.gamma[ch * sh_coefficients + 0] = 2.2;
    s.gamma[ch * sh_coefficients + 1] = -0.3;
    s.gamma[ch * sh_coefficients + 2] = -0.9;
    s.gamma[ch * sh_coefficients + 3] = -0.25;
  }
  return s;
}

semantic_code orbit_camera(const semantic_code& code, const vec3& omega) {
  const mat3    r   = rodrigues(omega);
  semantic_code out = code;
  out.camera_rotation()    = rotation_log(r * rodrigues(code.camera_rotation()));
  out.camera_translation() = r * vec3(code.camera_translation());
  return out;
}

semantic_code canonical_code(const face_model& model, const Eigen::Ref<const Eigen::VectorXd>& geometry) {
  if (geometry.size() != geometry_dim) throw_invalid("geometry block must have 195 entries");
  const auto    setup = canonical_setup_for(model);
  semantic_code code;
  code.geometry()                                        = geometry;
  code.theta().segment<3>(3 * joint_global).setZero();
  code.camera_rotation()                                 = setup.rotation;
  code.camera_translation()                              = setup.translation;
  code.gamma()                                           = setup.gamma;
  return code;
}

rendered_image normalize_render(const face_model& model, const semantic_code& code) {
  return normalize_render_geometry(model, code.geometry());
}

rendered_image normalize_render_geometry(const face_model& model, const Eigen::Ref<const Eigen::VectorXd>& geometry) {
  return render(model, canonical_code(model, geometry), canonical_setup_for(model).intrinsics);
}

Eigen::VectorXd normalize_render_backward(const face_model& model,
    const Eigen::Ref<const Eigen::VectorXd>& geometry, const rendered_image& base,
    const rgb_image& pixel_gradient) {
  const auto      code = canonical_code(model, geometry);
  Eigen::VectorXd g    = backward_image(model, code, canonical_setup_for(model).intrinsics, base, pixel_gradient)
                          .head<geometry_dim>();
  g.segment<3>(semantic_code::theta_offset + 3 * joint_global).setZero();
  return g;
}

}  // namespace craniofit
