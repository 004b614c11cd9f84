#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "craniofit/error.hpp"
#include "craniofit/face_model.hpp"
#include "craniofit/fitting.hpp"
#include "craniofit/gradcheck.hpp"
#include "craniofit/inpainting.hpp"
#include "craniofit/segmentation.hpp"
#include "craniofit/superimposition.hpp"

namespace craniofit {

// Line-based "key = value" file; keys carry section prefixes such as
// "fit.w_m". Blank lines and lines starting with '#' are skipped.
class key_value_config {
 public:
  static key_value_config read(const std::string& path);
  static key_value_config parse(const std::string& text, const std::string& origin,
      const std::filesystem::path& base_dir = {});

  bool                       has(const std::string& key) const { return entries_.count(key) > 0; }
  std::optional<std::string> get(const std::string& key) const;
  void                       set(const std::string& key, const std::string& value);

  std::string   text(const std::string& key, const std::string& fallback) const;
  double        number(const std::string& key, double fallback) const;
  int           integer(const std::string& key, int fallback) const;
  std::uint64_t unsigned_integer(const std::string& key, std::uint64_t fallback) const;
  bool          boolean(const std::string& key, bool fallback) const;
  // Relative paths resolve against the config file's directory.
  std::string path(const std::string& key) const;
  // Comma-separated paths.
  std::vector<std::string> path_list(const std::string& key) const;

  // Parse error naming the first key outside `allowed`.
  void require_known(const std::set<std::string>& allowed) const;

 private:
  struct entry {
    std::string value;
    int         line = 0;
  };
  std::string where(const std::string& key) const;

  std::map<std::string, entry> entries_;
  std::string                  origin_;
  std::filesystem::path        base_;
};

struct pipeline_config {
  std::string model_path;
  std::string landmark_map_path;  // "landmark_id vertex_index" lines
  std::string skull_mesh_path;
  std::string skull_landmarks_path;
  std::string depth_table_path;
  std::string candidates_dir;
  std::string segmentation_path;  // empty: template segmentation
  std::string training_path;
  std::vector<std::string> landmark_paths;
  std::string out_dir = "craniofit-out";

  double w_m            = 1.0;
  double w_r            = 1e-3;
  int    fit_max_iters  = 500;
  double fit_tolerance  = 1e-6;
  bool   same_person    = false;

  std::string alignment_mode = "identity";  // identity | procrustes
  unsigned    threads        = 0;

  inpaint_settings inpaint;
  int              latent_dim = default_latent_dim;
  removal_policy   policy     = removal_policy::any;
  std::string      candidate;  // empty: rank-1 candidate

  std::uint64_t seed = 1;

  static const std::set<std::string>& known_keys();
  static pipeline_config             from(const key_value_config& config);
  static pipeline_config             read(const std::string& path);
};

// Model file plus its landmark map, both from the config.
face_model load_model(const pipeline_config& config);

// One geometry (195) or full (228) code per line, whitespace separated.
std::vector<Eigen::VectorXd> read_codes(const std::string& path);
void write_codes(const std::vector<Eigen::VectorXd>& codes, const std::string& path);

// Candidate directory: "<id>.obj" meshes, optionally "<id>.code" geometry.
struct candidate_set {
  std::vector<candidate>                 faces;  // ascending id
  std::map<std::string, Eigen::VectorXd> codes;
};
candidate_set read_candidate_dir(const std::string& directory);

// Skull mesh, landmarks and normals moved by a rigid transform.
skull_annotation transform_skull(const skull_annotation& skull, const rigid_transform& t);

struct synth_options {
  std::uint64_t seed            = 1;
  int           vertices        = 2562;
  int           candidates      = 50;
  int           training        = 64;
  int           latent_dim      = default_latent_dim;
  int           views           = 3;
  bool          perturb_depths  = false;
  int           perturbed_count = 3;

  void validate() const;
};

// Writes model.cfm, truth face and code, skull mesh and landmarks, depth
// table, candidate meshes and codes (ground truth injected at a seeded
// position), training codes, landmark files of the ground truth from
// orbiting views, segmentation, a ready config.ini and manifest.json.
// Returns the manifest text.
std::string synthesize_dataset(const synth_options& options, const std::string& out_dir);

// Commands. Each validates and loads every input before writing anything,
// writes its artifacts and a JSON report under the output directory,
// prints a table to `out` and returns the report text.
std::string cmd_fit(const pipeline_config& config, std::ostream& out);
std::string cmd_rank(const pipeline_config& config, std::ostream& out);
std::string cmd_resynth(const pipeline_config& config, std::ostream& out);
std::string cmd_gradcheck(const face_model& model, const gradient_check_options& options,
    const std::string& out_dir, std::ostream& out);

// Process exit code for an error kind: 2 parse/invalid/io, 3 numerical,
// 4 contract.
int exit_code_for(error_kind kind);

}  // namespace craniofit
