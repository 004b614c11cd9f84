#include "craniofit/landmark_layout.hpp"

#include <cmath>
#include <numbers>

namespace craniofit {

namespace {

std::vector<vec2> build_detector_layout() {
  using std::numbers::pi;
  std::vector<vec2> pts;
  // 1-17 jaw contour, subject's right ear to left ear
  for (int t = 0; t <= 16; ++t) {
    const double phi = pi * t / 16.0;
    pts.emplace_back(-0.9 * std::cos(phi), -0.1 + 0.85 * std::sin(phi));
  }
  // 18-22 right brow outer -> inner, 23-27 left brow inner -> outer
  for (int t = 0; t < 5; ++t) {
    const double x = -0.72 + 0.14 * t;
    pts.emplace_back(x, -0.47 - 0.06 * std::sin(pi * t / 4.0));
  }
  for (int t = 0; t < 5; ++t) {
    const double x = 0.16 + 0.14 * t;
    pts.emplace_back(x, -0.47 - 0.06 * std::sin(pi * t / 4.0));
  }
  // 28-31 nose bridge, 32-36 nose base
  for (int t = 0; t < 4; ++t) pts.emplace_back(0.0, -0.3 + 0.13 * t);
  for (int t = 0; t < 5; ++t) {
    const double x = -0.2 + 0.1 * t;
    pts.emplace_back(x, 0.18 + 0.04 * std::cos(pi * (t - 2) / 4.0));
  }
  // 37-42 right eye, 43-48 left eye: corner, two upper, corner, two lower
  auto eye = [&](double cx, double sign) {
    const double angles[] = {0, 60, 120, 180, 240, 300};
    for (double a : angles) {
      const double r = a * pi / 180.0;
      pts.emplace_back(cx - sign * 0.16 * std::cos(r), -0.25 - 0.07 * std::sin(r));
    }
  };
  eye(-0.38, 1.0);
  eye(0.38, -1.0);
  // 49-60 outer lip starting at the right corner, over the top
  for (int t = 0; t < 12; ++t) {
    const double r = pi * t / 6.0;
    pts.emplace_back(-0.34 * std::cos(r), 0.45 - 0.13 * std::sin(r));
  }
  // 61-66 inner lip
  for (int t = 0; t < 6; ++t) {
    const double r = pi * t / 3.0 + pi / 6.0;
    pts.emplace_back(-0.2 * std::cos(r), 0.45 - 0.045 * std::sin(r));
  }
  return pts;
}

std::vector<reduced_landmark> build_reduced_table() {
  return {
      {1, {22, 23}, "glabella"},
      {2, {28, 29}, "nasion"},
      {3, {30, 31}, "rhinion"},
      {4, {32, 33}, "right alar base"},
      {5, {34}, "subnasale"},
      {6, {35, 36}, "left alar base"},
      {7, {1}, "right tragion"},
      {8, {2, 3}, "right upper jaw"},
      {9, {4, 5}, "right gonion"},
      {10, {6, 7}, "right mandible"},
      {11, {8}, "right mental"},
      {12, {9}, "menton"},
      {13, {10}, "left mental"},
      {14, {11, 12}, "left mandible"},
      {15, {13, 14}, "left gonion"},
      {16, {15, 16}, "left upper jaw"},
      {17, {17}, "left tragion"},
      {18, {18, 19}, "right brow outer"},
      {19, {20}, "right supraorbital"},
      {20, {21}, "right brow inner"},
      {21, {24}, "left brow inner"},
      {22, {25}, "left supraorbital"},
      {23, {26, 27}, "left brow outer"},
      {24, {37}, "right exocanthion"},
      {25, {38, 39}, "right upper lid"},
      {26, {40}, "right endocanthion"},
      {27, {41, 42}, "right infraorbital"},
      {28, {43}, "left exocanthion"},
      {29, {44, 45}, "left upper lid"},
      {30, {46}, "left endocanthion"},
      {31, {47, 48}, "left infraorbital"},
      {32, {49}, "right cheilion"},
      {33, {50}, "right upper lip outer"},
      {34, {51}, "right upper lip"},
      {35, {52}, "labrale superius"},
      {36, {53}, "left upper lip"},
      {37, {54}, "left upper lip outer"},
      {38, {55}, "left cheilion"},
      {39, {56}, "left lower lip outer"},
      {40, {57}, "left lower lip"},
      {41, {58}, "labrale inferius"},
      {42, {59}, "right lower lip"},
      {43, {60}, "right lower lip outer"},
      {44, {61, 62}, "inner lip right"},
      {45, {63, 64}, "inner lip upper left"},
      {46, {65, 66}, "inner lip lower"},
  };
}

}  // namespace

const std::vector<vec2>& detector_frontal_layout() {
  static const auto layout = build_detector_layout();
  return layout;
}

const std::vector<reduced_landmark>& reduced_landmark_table() {
  static const auto table = build_reduced_table();
  return table;
}

vec2 reduced_frontal_position(const reduced_landmark& lm) {
  const auto& layout = detector_frontal_layout();
  vec2        sum    = vec2::Zero();
  for (auto s : lm.sources) sum += layout[s - 1];
  return sum / static_cast<double>(lm.sources.size());
}

const std::vector<tissue_landmark>& placeholder_tissue_depths() {
  // SYNTHETIC placeholder depths; not forensic measurements
  static const std::vector<tissue_landmark> table = {
      {1, 5.5}, {2, 6.5}, {3, 3.0}, {5, 14.0}, {9, 11.0}, {10, 12.0}, {11, 10.5},
      {12, 10.0}, {13, 10.5}, {14, 12.0}, {15, 11.0}, {19, 7.0}, {22, 7.0},
      {27, 6.5}, {31, 6.5}, {32, 11.0}, {35, 12.0}, {38, 11.0}, {41, 13.0},
  };
  return table;
}

}  // namespace craniofit
