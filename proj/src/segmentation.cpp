#include "craniofit/segmentation.hpp"

#include <fstream>
#include <sstream>

#include "craniofit/error.hpp"

namespace craniofit {

namespace {

enum : int {
  back_head = 0,
  forehead,
  nose,
  right_eye,
  left_eye,
  right_brow,
  left_brow,
  mouth,
  chin,
  right_face,
  left_face,
};

const std::vector<face_region>& template_regions() {
  static const std::vector<face_region> r = {
      {back_head, "back_head", true},
      {forehead, "forehead", true},
      {nose, "nose", false},
      {right_eye, "right_eye", false},
      {left_eye, "left_eye", false},
      {right_brow, "right_brow", false},
      {left_brow, "left_brow", false},
      {mouth, "mouth", false},
      {chin, "chin", false},
      {right_face, "right_face", false},
      {left_face, "left_face", false},
  };
  return r;
}

int seed_region(int landmark_id) {
  if (landmark_id == 1) return forehead;
  if (landmark_id <= 6) return nose;
  if (landmark_id <= 11) return right_face;
  if (landmark_id == 12) return chin;
  if (landmark_id <= 17) return left_face;
  if (landmark_id <= 20) return right_brow;
  if (landmark_id <= 23) return left_brow;
  if (landmark_id <= 27) return right_eye;
  if (landmark_id <= 31) return left_eye;
  return mouth;
}

void fill_region_landmarks(segmentation& seg, const face_model& model) {
  seg.region_landmarks.clear();
  for (const auto& r : seg.regions) seg.region_landmarks[r.id];
  for (const auto& [id, v] : model.anthropometric_map) seg.region_landmarks[seg.labels.at(v)].push_back(id);
}

}  // namespace

void segmentation::validate(const face_model& model) const {
  if (topology_id != model.mean_shape.topology_id) {
    throw_invalid("segmentation topology '" + topology_id + "' does not match the model's '" +
                  model.mean_shape.topology_id + "'");
  }
  if (static_cast<int>(labels.size()) != model.vertex_count()) {
    throw_invalid("segmentation labels " + std::to_string(labels.size()) + " vertices, model has " +
                  std::to_string(model.vertex_count()));
  }
  const auto ids = region_ids();
  for (std::size_t v = 0; v < labels.size(); ++v) {
    if (!ids.count(labels[v])) throw_invalid("vertex " + std::to_string(v) + " has unknown region " + std::to_string(labels[v]));
  }
  std::map<int, int> seen;
  for (const auto& [r, lms] : region_landmarks) {
    for (int id : lms) seen[id]++;
  }
  for (const auto& [id, v] : model.anthropometric_map) {
    if (seen[id] != 1) throw_invalid("landmark " + std::to_string(id) + " must belong to exactly one region");
  }
}

int segmentation::region_of_landmark(int landmark_id) const {
  for (const auto& [r, lms] : region_landmarks) {
    for (int id : lms)
      if (id == landmark_id) return r;
  }
  throw_invalid("landmark " + std::to_string(landmark_id) + " is not assigned to a region");
}

const face_region& segmentation::region(int id) const {
  for (const auto& r : regions)
    if (r.id == id) return r;
  throw_invalid("unknown region " + std::to_string(id));
}

std::vector<bool> segmentation::vertices_in(const std::set<int>& region_ids) const {
  std::vector<bool> out(labels.size());
  for (std::size_t v = 0; v < labels.size(); ++v) out[v] = region_ids.count(labels[v]) > 0;
  return out;
}

std::vector<bool> segmentation::definite_vertices() const {
  std::set<int> ids;
  for (const auto& r : regions)
    if (r.definite) ids.insert(r.id);
  return vertices_in(ids);
}

std::set<int> segmentation::region_ids() const {
  std::set<int> ids;
  for (const auto& r : regions) ids.insert(r.id);
  return ids;
}

segmentation template_segmentation(const face_model& model) {
  model.validate();
  segmentation seg;
  seg.topology_id = model.mean_shape.topology_id;
  seg.regions     = template_regions();
  const auto& verts = model.mean_shape.vertices;
  seg.labels.assign(verts.size(), -1);

  // Image-like frame: the face looks towards -z and y grows downwards.
  for (std::size_t v = 0; v < verts.size(); ++v) {
    const vec3&  p = verts[v];
    const double r = p.norm();
    if (p.z() > 0.3 * r) {
      seg.labels[v] = back_head;
    } else if (p.z() < -0.25 * r && p.y() < -46.0) {
      seg.labels[v] = forehead;
    }
  }
  for (std::size_t v = 0; v < verts.size(); ++v) {
    if (seg.labels[v] >= 0) continue;
    double best = 1e300;
    for (const auto& [id, lv] : model.anthropometric_map) {
      const double d = (verts[v] - verts[lv]).squaredNorm();
      if (d < best) {
        best          = d;
        seg.labels[v] = seed_region(id);
      }
    }
  }
  fill_region_landmarks(seg, model);
  seg.validate(model);
  return seg;
}

void write_segmentation(const segmentation& seg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw_io("cannot open " + path + " for writing");
  out << "topology " << seg.topology_id << '\n';
  for (const auto& r : seg.regions) out << "region " << r.id << ' ' << r.name << ' ' << (r.definite ? 1 : 0) << '\n';
  out << "labels\n";
  for (int l : seg.labels) out << l << '\n';
  if (!out) throw_io("failed writing " + path);
}

segmentation read_segmentation(const std::string& path, const face_model& model) {
  std::ifstream in(path);
  if (!in) throw_io("cannot open segmentation " + path);
  segmentation seg;
  std::string  line;
  int          line_no     = 0;
  bool         in_labels   = false;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string        word;
    if (!(ls >> word) || word[0] == '#') continue;
    const std::string where = path + ":" + std::to_string(line_no);
    if (in_labels) {
      std::size_t used = 0;
      int         l    = 0;
      try {
        l = std::stoi(word, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != word.size()) throw_parse(where + ": expected a region label");
      seg.labels.push_back(l);
    } else if (word == "topology") {
      if (!(ls >> seg.topology_id)) throw_parse(where + ": missing topology id");
    } else if (word == "region") {
      face_region r;
      int         definite = 0;
      if (!(ls >> r.id >> r.name >> definite) || (definite != 0 && definite != 1)) {
        throw_parse(where + ": expected 'region <id> <name> <0|1>'");
      }
      r.definite = definite == 1;
      seg.regions.push_back(r);
    } else if (word == "labels") {
      in_labels = true;
    } else {
      throw_parse(where + ": unknown record '" + word + "'");
    }
  }
  if (static_cast<int>(seg.labels.size()) != model.vertex_count()) {
    throw_parse(path + ": expected " + std::to_string(model.vertex_count()) + " labels, found " +
                std::to_string(seg.labels.size()));
  }
  for (int l : seg.labels) {
    if (!seg.region_ids().count(l)) throw_parse(path + ": label " + std::to_string(l) + " names no region");
  }
  fill_region_landmarks(seg, model);
  seg.validate(model);
  return seg;
}

}  // namespace craniofit
