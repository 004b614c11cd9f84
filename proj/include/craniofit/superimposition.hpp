#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "craniofit/face_model.hpp"
#include "craniofit/geometry.hpp"

namespace craniofit {

inline constexpr double default_match_threshold_mm = 2.5;

// Soft-tissue depth d_i and match threshold eta_i per landmark id (mm).
struct tissue_entry {
  double depth = 0;
  double eta   = default_match_threshold_mm;
};

struct tissue_table {
  std::map<int, tissue_entry> entries;

  // Depths and thresholds strictly positive and finite.
  void validate() const;
  // Also demands every id to be a landmark of the model.
  void validate(const face_model& model) const;
  const tissue_entry& at(int id) const;
};

// "id,depth_mm,eta_mm" per line; eta may be left empty or omitted (2.5 mm).
// A first line starting with "id" is a header; '#' lines are comments.
tissue_table read_tissue_table(const std::string& path);
void         write_tissue_table(const tissue_table& table, const std::string& path);

// The synthetic placeholder depths shipped with the landmark layout.
tissue_table placeholder_tissue_table();

struct skull_landmark {
  vec3 position;
  vec3 normal;  // outward unit vector
};

struct skull_annotation {
  mesh                          skull;
  std::map<int, skull_landmark> landmarks;

  // Unit normals and landmark positions on the skull within `tolerance` mm.
  void validate(double tolerance = 1e-3) const;
};

// Text "id x y z nx ny nz" per line, '#' comments.
std::map<int, skull_landmark> read_skull_landmarks(const std::string& path);
void write_skull_landmarks(const std::map<int, skull_landmark>& landmarks, const std::string& path);
skull_annotation load_skull(const std::string& mesh_path, const std::string& landmark_path);

// n_i = m_i + d_i * normal_i for every id of the table.
std::map<int, vec3> extend_landmarks(const skull_annotation& skull, const tissue_table& depths);

// How the face is placed relative to the skull before scoring. `automatic`
// solves the rigid motion of the face points onto the extended landmarks.
struct alignment {
  bool            automatic = false;
  rigid_transform transform;

  static alignment identity() { return {}; }
  static alignment fixed(const rigid_transform& t) { return {false, t}; }
  static alignment procrustes() { return {true, {}}; }
};

struct landmark_match {
  int    id = 0;
  vec3   extended;    // n_i
  vec3   face_point;  // p_i after alignment
  double distance = 0;
  double eta      = 0;
  bool   matched  = false;
};

struct superimposition_result {
  std::vector<landmark_match> rows;  // ascending id
  int                         matched   = 0;
  int                         unmatched = 0;
  double                      score     = 0;  // M / (M + U)
  rigid_transform             face_transform;

  double mean_distance() const;
  std::vector<int> unmatched_ids() const;
};

// Scores a face mesh with the model's topology against the skull. Uses the
// ids present in both the table and the model's landmark map.
superimposition_result superimpose(const mesh& face, const face_model& model,
    const skull_annotation& skull, const tissue_table& depths, const alignment& align);

// Same scoring against precomputed extended landmarks.
superimposition_result superimpose_points(const mesh& face, const face_model& model,
    const std::map<int, vec3>& extended, const tissue_table& depths, const alignment& align);

struct candidate {
  std::string id;
  mesh        face;
};

struct ranked_candidate {
  std::string id;
  double      score         = 0;
  double      mean_distance = 0;
  int         matched       = 0;
  int         unmatched     = 0;
};

// Descending score, then ascending mean distance, then ascending id.
// Candidates are scored on `threads` workers (0 = hardware concurrency).
std::vector<ranked_candidate> rank_candidates(const skull_annotation& skull,
    const tissue_table& depths, const face_model& model, const std::vector<candidate>& candidates,
    const alignment& align, unsigned threads = 0);

// Fraction as a percentage with two decimals, e.g. "43.79%".
std::string format_percent(double fraction);

// JSON text: per-landmark rows, counts, score ratio and percentage.
std::string superimposition_report_json(const superimposition_result& result);
std::string ranking_report_json(const std::vector<ranked_candidate>& ranking);

struct surface_constraint {
  int  vertex = 0;
  vec3 point;
};

// Projects every face vertex flagged in `definite` onto the offset of the
// skull at the forehead depth d_1 (landmark id 1 of the table).
std::vector<surface_constraint> definite_region_landmarks(const skull_annotation& skull,
    const tissue_table& depths, const mesh& face, const std::vector<bool>& definite);

// Skull built under a known face: each vertex moves inward along the face
// normal by its landmark depth (landmark vertices) or by d_1 (all others),
// then vertices flagged in `definite` are corrected so the face lies at
// distance d_1 from the skull. Skull landmarks are the moved landmark
// vertices with the face normals, so the face superimposes exactly.
skull_annotation synthesize_skull(const mesh& face, const face_model& model,
    const tissue_table& depths, const std::vector<bool>& definite, int correction_rounds = 20);

}  // namespace craniofit
