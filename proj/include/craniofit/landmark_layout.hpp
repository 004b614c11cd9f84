#pragma once

#include <string>
#include <vector>

#include "craniofit/geometry.hpp"

namespace craniofit {

inline constexpr int detected_landmark_count = 66;
inline constexpr int reduced_landmark_count  = 46;

// One reduced landmark: its id (1..46) and the detector ids (1..66) merged
// into it. Reduced id 1 is the glabella, inside the forehead definite region.
struct reduced_landmark {
  int              id;
  std::vector<int> sources;
  std::string      name;
};

// Nominal frontal layout of the 66 detector landmarks, in a face-box frame
// with x in [-1, 1] left to right and y in [-1, 1] top to bottom.
const std::vector<vec2>& detector_frontal_layout();

// The fixed 66 -> 46 merge table.
const std::vector<reduced_landmark>& reduced_landmark_table();

// Frontal position of a reduced landmark (mean of its sources).
vec2 reduced_frontal_position(const reduced_landmark& lm);

// Reduced landmark ids that carry a soft-tissue depth in the shipped
// placeholder table, with their synthetic depths in mm.
struct tissue_landmark {
  int    id;
  double depth_mm;
};
const std::vector<tissue_landmark>& placeholder_tissue_depths();

}  // namespace craniofit
