#include "craniofit/superimposition.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "craniofit/error.hpp"
#include "craniofit/landmark_layout.hpp"
#include "craniofit/mesh_io.hpp"

namespace craniofit {

namespace {

std::string id_list(const std::vector<int>& ids) {
  std::string out;
  for (int id : ids) out += (out.empty() ? "" : ", ") + std::to_string(id);
  return out;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double parse_number(const std::string& field, const std::string& where) {
  std::size_t used = 0;
  double      v    = 0;
  try {
    v = std::stod(field, &used);
  } catch (const std::exception&) {
    throw_parse(where + ": '" + field + "' is not a number");
  }
  if (used != field.size()) throw_parse(where + ": '" + field + "' is not a number");
  return v;
}

}  // namespace

void tissue_table::validate() const {
  if (entries.empty()) throw_invalid("tissue table is empty");
  for (const auto& [id, e] : entries) {
    if (!(e.depth > 0) || !std::isfinite(e.depth)) {
      throw_invalid("tissue depth of landmark " + std::to_string(id) + " must be positive");
    }
    if (!(e.eta > 0) || !std::isfinite(e.eta)) {
      throw_invalid("match threshold of landmark " + std::to_string(id) + " must be positive");
    }
  }
}

void tissue_table::validate(const face_model& model) const {
  validate();
  std::vector<int> unknown;
  for (const auto& [id, e] : entries) {
    if (!model.anthropometric_map.count(id)) unknown.push_back(id);
  }
  if (!unknown.empty()) throw_invalid("tissue table ids not in the landmark map: " + id_list(unknown));
}

const tissue_entry& tissue_table::at(int id) const {
  const auto it = entries.find(id);
  if (it == entries.end()) throw_invalid("tissue table has no landmark " + std::to_string(id));
  return it->second;
}

tissue_table read_tissue_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_io("cannot open tissue table " + path);
  tissue_table table;
  std::string  line;
  int          line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (line_no == 1 && t.rfind("id", 0) == 0) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    std::vector<std::string> fields;
    std::stringstream        ss(t);
    std::string              f;
    while (std::getline(ss, f, ',')) fields.push_back(trim(f));
    if (!t.empty() && t.back() == ',') fields.emplace_back();
    if (fields.size() < 2 || fields.size() > 3) throw_parse(where + ": expected 'id,depth_mm,eta_mm'");
    const double id_value = parse_number(fields[0], where);
    const int    id       = static_cast<int>(id_value);
    if (id != id_value) throw_parse(where + ": landmark id must be an integer");
    tissue_entry e;
    e.depth = parse_number(fields[1], where);
    if (fields.size() == 3 && !fields[2].empty()) e.eta = parse_number(fields[2], where);
    if (!table.entries.emplace(id, e).second) throw_parse(where + ": duplicate landmark id " + std::to_string(id));
  }
  table.validate();
  return table;
}

void write_tissue_table(const tissue_table& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw_io("cannot open " + path + " for writing");
  out << "id,depth_mm,eta_mm\n" << std::setprecision(17);
  for (const auto& [id, e] : table.entries) out << id << ',' << e.depth << ',' << e.eta << '\n';
  if (!out) throw_io("failed writing " + path);
}

tissue_table placeholder_tissue_table() {
  tissue_table t;
  for (const auto& d : placeholder_tissue_depths()) t.entries[d.id] = {d.depth_mm, default_match_threshold_mm};
  return t;
}

void skull_annotation::validate(double tolerance) const {
  skull.validate();
  if (landmarks.empty()) throw_invalid("skull annotation has no landmarks");
  const closest_point_index index(skull);
  for (const auto& [id, lm] : landmarks) {
    if (!lm.position.allFinite() || std::abs(lm.normal.norm() - 1.0) > 1e-9) {
      throw_invalid("skull landmark " + std::to_string(id) + " needs a finite position and unit normal");
    }
    const double d = index.query(lm.position).distance;
    if (d > tolerance) {
      throw_invalid("skull landmark " + std::to_string(id) + " lies " + std::to_string(d) + " mm off the skull");
    }
  }
}

std::map<int, skull_landmark> read_skull_landmarks(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_io("cannot open skull landmark file " + path);
  std::map<int, skull_landmark> out;
  std::string                   line;
  int                           line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::istringstream ls(t);
    int                id;
    skull_landmark     lm;
    std::string        extra;
    if (!(ls >> id >> lm.position.x() >> lm.position.y() >> lm.position.z() >> lm.normal.x() >> lm.normal.y() >>
            lm.normal.z()) ||
        (ls >> extra)) {
      throw_parse(path + ":" + std::to_string(line_no) + ": expected 'id x y z nx ny nz'");
    }
    if (!out.emplace(id, lm).second) {
      throw_parse(path + ":" + std::to_string(line_no) + ": duplicate landmark id " + std::to_string(id));
    }
  }
  return out;
}

void write_skull_landmarks(const std::map<int, skull_landmark>& landmarks, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw_io("cannot open " + path + " for writing");
  out << std::setprecision(17);
  for (const auto& [id, lm] : landmarks) {
    out << id << ' ' << lm.position.x() << ' ' << lm.position.y() << ' ' << lm.position.z() << ' '
        << lm.normal.x() << ' ' << lm.normal.y() << ' ' << lm.normal.z() << '\n';
  }
  if (!out) throw_io("failed writing " + path);
}

skull_annotation load_skull(const std::string& mesh_path, const std::string& landmark_path) {
  skull_annotation s;
  s.skull     = read_obj(mesh_path);
  s.landmarks = read_skull_landmarks(landmark_path);
  s.validate();
  return s;
}

std::map<int, vec3> extend_landmarks(const skull_annotation& skull, const tissue_table& depths) {
  depths.validate();
  std::vector<int> missing;
  for (const auto& [id, e] : depths.entries) {
    if (!skull.landmarks.count(id)) missing.push_back(id);
  }
  if (!missing.empty()) throw_invalid("skull annotation lacks landmarks: " + id_list(missing));
  std::map<int, vec3> out;
  for (const auto& [id, e] : depths.entries) {
    const auto& lm = skull.landmarks.at(id);
    out[id]        = lm.position + e.depth * lm.normal;
  }
  return out;
}

double superimposition_result::mean_distance() const {
  if (rows.empty()) return 0;
  double s = 0;
  for (const auto& r : rows) s += r.distance;
  return s / static_cast<double>(rows.size());
}

std::vector<int> superimposition_result::unmatched_ids() const {
  std::vector<int> ids;
  for (const auto& r : rows)
    if (!r.matched) ids.push_back(r.id);
  return ids;
}

superimposition_result superimpose_points(const mesh& face, const face_model& model,
    const std::map<int, vec3>& extended, const tissue_table& depths, const alignment& align) {
  if (face.topology_id != model.mean_shape.topology_id || face.vertex_count() != model.vertex_count()) {
    throw_invalid("face topology '" + face.topology_id + "' does not match the model's '" +
                  model.mean_shape.topology_id + "'");
  }
  std::vector<int>  ids;
  std::vector<vec3> targets, points;
  for (const auto& [id, n] : extended) {
    const auto v = model.anthropometric_map.find(id);
    if (v == model.anthropometric_map.end() || !depths.entries.count(id)) continue;
    ids.push_back(id);
    targets.push_back(n);
    points.push_back(face.vertices[v->second]);
  }
  if (ids.empty()) throw_invalid("no landmark is shared by the skull, the tissue table and the model");

  superimposition_result out;
  out.face_transform = align.automatic ? procrustes(points, targets) : align.transform;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    landmark_match row;
    row.id         = ids[i];
    row.extended   = targets[i];
    row.face_point = out.face_transform.apply(points[i]);
    row.distance   = (row.face_point - row.extended).norm();
    row.eta        = depths.at(ids[i]).eta;
    row.matched    = row.distance < row.eta;
    (row.matched ? out.matched : out.unmatched)++;
    out.rows.push_back(row);
  }
  out.score = static_cast<double>(out.matched) / static_cast<double>(out.matched + out.unmatched);
  return out;
}

superimposition_result superimpose(const mesh& face, const face_model& model,
    const skull_annotation& skull, const tissue_table& depths, const alignment& align) {
  return superimpose_points(face, model, extend_landmarks(skull, depths), depths, align);
}

std::vector<ranked_candidate> rank_candidates(const skull_annotation& skull,
    const tissue_table& depths, const face_model& model, const std::vector<candidate>& candidates,
    const alignment& align, unsigned threads) {
  if (candidates.empty()) throw_invalid("candidate list is empty");
  std::vector<std::string> offenders;
  for (const auto& c : candidates) {
    if (c.face.topology_id != model.mean_shape.topology_id || c.face.vertex_count() != model.vertex_count()) {
      offenders.push_back(c.id);
    }
  }
  if (!offenders.empty()) {
    std::string list;
    for (const auto& o : offenders) list += (list.empty() ? "" : ", ") + o;
    throw_invalid("candidates with a foreign topology: " + list);
  }
  const auto extended = extend_landmarks(skull, depths);

  std::vector<ranked_candidate> out(candidates.size());
  std::vector<std::exception_ptr> failures(candidates.size());
  std::atomic<std::size_t>      next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < candidates.size(); i = next++) {
      try {
        const auto r = superimpose_points(candidates[i].face, model, extended, depths, align);
        out[i]       = {candidates[i].id, r.score, r.mean_distance(), r.matched, r.unmatched};
      } catch (...) {
        failures[i] = std::current_exception();
      }
    }
  };
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(candidates.size()));
  {
    std::vector<std::jthread> pool;
    for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
  }
  for (const auto& f : failures)
    if (f) std::rethrow_exception(f);

  std::sort(out.begin(), out.end(), [](const ranked_candidate& a, const ranked_candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.mean_distance != b.mean_distance) return a.mean_distance < b.mean_distance;
    return a.id < b.id;
  });
  return out;
}

std::string format_percent(double fraction) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << 100.0 * fraction << '%';
  return s.str();
}

std::string superimposition_report_json(const superimposition_result& result) {
  nlohmann::ordered_json j;
  j["score"]         = result.score;
  j["percent"]       = format_percent(result.score);
  j["matched"]       = result.matched;
  j["unmatched"]     = result.unmatched;
  j["mean_distance"] = result.mean_distance();
  auto& rows         = j["landmarks"] = nlohmann::ordered_json::array();
  for (const auto& r : result.rows) {
    rows.push_back({{"id", r.id},
        {"extended", {r.extended.x(), r.extended.y(), r.extended.z()}},
        {"face", {r.face_point.x(), r.face_point.y(), r.face_point.z()}},
        {"distance", r.distance},
        {"eta", r.eta},
        {"matched", r.matched}});
  }
  return j.dump(2);
}

std::string ranking_report_json(const std::vector<ranked_candidate>& ranking) {
  auto j = nlohmann::ordered_json::array();
  int  rank = 0;
  for (const auto& r : ranking) {
    j.push_back({{"rank", ++rank},
        {"id", r.id},
        {"score", r.score},
        {"percent", format_percent(r.score)},
        {"matched", r.matched},
        {"unmatched", r.unmatched},
        {"mean_distance", r.mean_distance}});
  }
  return j.dump(2);
}

std::vector<surface_constraint> definite_region_landmarks(const skull_annotation& skull,
    const tissue_table& depths, const mesh& face, const std::vector<bool>& definite) {
  if (definite.size() != face.vertices.size()) throw_invalid("definite-region labels must cover every face vertex");
  const double                    d1 = depths.at(1).depth;
  const offset_surface            surface(skull.skull, d1);
  std::vector<surface_constraint> out;
  for (int v = 0; v < face.vertex_count(); ++v) {
    if (definite[v]) out.push_back({v, surface.project(face.vertices[v])});
  }
  if (out.empty()) throw_invalid("definite region is empty");
  return out;
}

skull_annotation synthesize_skull(const mesh& face, const face_model& model,
    const tissue_table& depths, const std::vector<bool>& definite, int correction_rounds) {
  depths.validate(model);
  if (definite.size() != face.vertices.size()) throw_invalid("definite-region labels must cover every face vertex");
  const double d1      = depths.at(1).depth;
  const auto   normals = vertex_normals(face).normals;

  std::vector<double> depth(face.vertices.size(), d1);
  std::vector<bool>   pinned(face.vertices.size(), false);
  for (const auto& [id, e] : depths.entries) {
    const int v = model.anthropometric_map.at(id);
    depth[v]    = e.depth;
    pinned[v]   = true;
  }

  skull_annotation out;
  out.skull             = face;
  out.skull.topology_id = face.topology_id + "-skull";
  for (std::size_t v = 0; v < face.vertices.size(); ++v) out.skull.vertices[v] = face.vertices[v] - depth[v] * normals[v];

  // Nudge definite vertices along the normal until the face-to-skull
  // distance equals d_1; landmark vertices stay put.
  for (int round = 0; round < correction_rounds; ++round) {
    const closest_point_index index(out.skull);
    double                    worst = 0;
    std::vector<vec3>         moved = out.skull.vertices;
    for (std::size_t v = 0; v < face.vertices.size(); ++v) {
      if (!definite[v] || pinned[v]) continue;
      const double err = index.query(face.vertices[v]).distance - d1;
      worst            = std::max(worst, std::abs(err));
      moved[v] += err * normals[v];
    }
    out.skull.vertices = std::move(moved);
    if (worst < 1e-9) break;
  }

  for (const auto& [id, e] : depths.entries) {
    const int v = model.anthropometric_map.at(id);
    out.landmarks[id] = {out.skull.vertices[v], normals[v]};
  }
  return out;
}

}  // namespace craniofit
