#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "craniofit/face_model.hpp"

namespace craniofit {

struct face_region {
  int         id = 0;
  std::string name;
  bool        definite = false;  // tissue depth treated as constant
};

// Per-vertex region labels on a topology. Labels carry over unchanged to
// every mesh of the same topology.
struct segmentation {
  std::string                     topology_id;
  std::vector<face_region>        regions;           // ascending id
  std::vector<int>                labels;            // one region id per vertex
  std::map<int, std::vector<int>> region_landmarks;  // region id -> landmark ids

  // Labels cover the model's vertices with known region ids and every
  // landmark of the model belongs to exactly one region.
  void validate(const face_model& model) const;

  int                region_of_landmark(int landmark_id) const;
  const face_region& region(int id) const;
  // Vertex flags for membership in any of `region_ids`.
  std::vector<bool> vertices_in(const std::set<int>& region_ids) const;
  std::vector<bool> definite_vertices() const;
  std::set<int>     region_ids() const;
};

// Rule-based labelling of the model's mean shape: the back of the head, the
// forehead above the brows, then every other vertex joins the region of its
// nearest landmark seed.
segmentation template_segmentation(const face_model& model);

// Text format: "topology <id>", one "region <id> <name> <0|1>" line per
// region, then "labels" followed by one label per vertex.
void         write_segmentation(const segmentation& seg, const std::string& path);
segmentation read_segmentation(const std::string& path, const face_model& model);

}  // namespace craniofit
