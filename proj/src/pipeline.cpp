#include "craniofit/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "json.hpp"

#include "craniofit/mesh_io.hpp"
#include "craniofit/population.hpp"
#include "craniofit/renderer.hpp"
#include "craniofit/rotation.hpp"

namespace craniofit {

namespace fs = std::filesystem;
using json   = nlohmann::ordered_json;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw_invalid("config is missing the " + what + " path");
  if (!fs::exists(path)) throw_io(what + " not found: " + path);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw_io("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw_io("failed writing " + path.string());
}

json vector_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

// Runs one pipeline stage, records its wall time and prefixes errors with
// the stage name.
class stage_clock {
 public:
  template <class F>
  auto run(const std::string& name, F&& f) {
    const auto start = std::chrono::steady_clock::now();
    try {
      if constexpr (std::is_void_v<decltype(f())>) {
        f();
        record(name, start);
      } else {
        auto result = f();
        record(name, start);
        return result;
      }
    } catch (const error& e) {
      throw error(e.kind(), name + ": " + e.what());
    }
  }

  json timings() const { return timings_; }

 private:
  void record(const std::string& name, std::chrono::steady_clock::time_point start) {
    timings_.push_back({{"stage", name},
        {"seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()}});
  }

  json timings_ = json::array();
};

alignment alignment_for(const std::string& mode) {
  return mode == "procrustes" ? alignment::procrustes() : alignment::identity();
}

}  // namespace

// ---------------------------------------------------------------- config

key_value_config key_value_config::read(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_io("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path, fs::absolute(path).parent_path());
}

key_value_config key_value_config::parse(const std::string& text, const std::string& origin,
    const fs::path& base_dir) {
  key_value_config c;
  c.origin_ = origin;
  c.base_   = base_dir;
  std::istringstream in(text);
  std::string        line;
  int                line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    const auto at = origin + ":" + std::to_string(line_no);
    if (eq == std::string::npos) throw_parse(at + ": expected key=value");
    const auto key = trim(t.substr(0, eq));
    if (key.empty()) throw_parse(at + ": empty key");
    if (c.entries_.count(key)) throw_parse(at + ": duplicate key '" + key + "'");
    c.entries_[key] = {trim(t.substr(eq + 1)), line_no};
  }
  return c;
}

std::optional<std::string> key_value_config::get(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second.value;
}

void key_value_config::set(const std::string& key, const std::string& value) { entries_[key] = {value, 0}; }

std::string key_value_config::where(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end() || it->second.line == 0) return "'" + key + "'";
  return origin_ + ":" + std::to_string(it->second.line) + ": '" + key + "'";
}

std::string key_value_config::text(const std::string& key, const std::string& fallback) const {
  return get(key).value_or(fallback);
}

double key_value_config::number(const std::string& key, double fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  std::size_t used = 0;
  double      x    = 0;
  try {
    x = std::stod(*v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v->size() || !std::isfinite(x)) throw_parse(where(key) + " expects a number, got '" + *v + "'");
  return x;
}

int key_value_config::integer(const std::string& key, int fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  std::size_t used = 0;
  int         x    = 0;
  try {
    x = std::stoi(*v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v->size()) throw_parse(where(key) + " expects an integer, got '" + *v + "'");
  return x;
}

std::uint64_t key_value_config::unsigned_integer(const std::string& key, std::uint64_t fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  std::size_t   used = 0;
  std::uint64_t x    = 0;
  try {
    if (!v->empty() && (*v)[0] != '-') x = std::stoull(*v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v->size()) throw_parse(where(key) + " expects a non-negative integer, got '" + *v + "'");
  return x;
}

bool key_value_config::boolean(const std::string& key, bool fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  throw_parse(where(key) + " expects true or false, got '" + *v + "'");
}

std::string key_value_config::path(const std::string& key) const {
  const auto v = get(key);
  if (!v || v->empty()) return "";
  const fs::path p(*v);
  return (p.is_absolute() || base_.empty() ? p : base_ / p).lexically_normal().string();
}

std::vector<std::string> key_value_config::path_list(const std::string& key) const {
  std::vector<std::string> out;
  const auto               v = get(key);
  if (!v) return out;
  std::stringstream ss(*v);
  std::string       item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    const fs::path p(item);
    out.push_back((p.is_absolute() || base_.empty() ? p : base_ / p).lexically_normal().string());
  }
  return out;
}

void key_value_config::require_known(const std::set<std::string>& allowed) const {
  for (const auto& [key, e] : entries_) {
    if (!allowed.count(key)) throw_parse(where(key) + " is not a known setting");
  }
}

const std::set<std::string>& pipeline_config::known_keys() {
  static const std::set<std::string> keys = {"seed", "paths.model", "paths.landmark_map", "paths.skull_mesh", "paths.skull_landmarks",
      "paths.depth_table", "paths.candidates", "paths.segmentation", "paths.training", "paths.landmarks", "paths.out",
      "fit.w_m", "fit.w_r", "fit.max_iters", "fit.tolerance", "fit.same_person", "superimposition.alignment",
      "superimposition.threads", "inpaint.lambda_p", "inpaint.lambda_2", "inpaint.window", "inpaint.latent_dim",
      "inpaint.max_iters", "inpaint.tolerance", "inpaint.policy", "resynth.candidate"};
  return keys;
}

pipeline_config pipeline_config::from(const key_value_config& c) {
  c.require_known(known_keys());
  pipeline_config p;
  p.seed                 = c.unsigned_integer("seed", p.seed);
  p.model_path           = c.path("paths.model");
  p.landmark_map_path    = c.path("paths.landmark_map");
  p.skull_mesh_path      = c.path("paths.skull_mesh");
  p.skull_landmarks_path = c.path("paths.skull_landmarks");
  p.depth_table_path     = c.path("paths.depth_table");
  p.candidates_dir       = c.path("paths.candidates");
  p.segmentation_path    = c.path("paths.segmentation");
  p.training_path        = c.path("paths.training");
  p.landmark_paths       = c.path_list("paths.landmarks");
  if (c.has("paths.out")) p.out_dir = c.path("paths.out");

  p.w_m           = c.number("fit.w_m", p.w_m);
  p.w_r           = c.number("fit.w_r", p.w_r);
  p.fit_max_iters = c.integer("fit.max_iters", p.fit_max_iters);
  p.fit_tolerance = c.number("fit.tolerance", p.fit_tolerance);
  p.same_person   = c.boolean("fit.same_person", p.same_person);

  p.alignment_mode = c.text("superimposition.alignment", p.alignment_mode);
  if (p.alignment_mode != "identity" && p.alignment_mode != "procrustes") {
    throw_parse("superimposition.alignment must be 'identity' or 'procrustes', got '" + p.alignment_mode + "'");
  }
  const int threads = c.integer("superimposition.threads", 0);
  if (threads < 0) throw_parse("superimposition.threads must be non-negative");
  p.threads = static_cast<unsigned>(threads);

  p.inpaint.lambda_p            = c.number("inpaint.lambda_p", p.inpaint.lambda_p);
  p.inpaint.lambda_2            = c.number("inpaint.lambda_2", p.inpaint.lambda_2);
  p.inpaint.window              = c.integer("inpaint.window", p.inpaint.window);
  p.inpaint.optimizer.max_iters = c.integer("inpaint.max_iters", p.inpaint.optimizer.max_iters);
  p.inpaint.optimizer.tolerance = c.number("inpaint.tolerance", p.inpaint.optimizer.tolerance);
  p.latent_dim                  = c.integer("inpaint.latent_dim", p.latent_dim);
  const auto policy             = c.text("inpaint.policy", "any");
  if (policy == "any") p.policy = removal_policy::any;
  else if (policy == "majority") p.policy = removal_policy::majority;
  else throw_parse("inpaint.policy must be 'any' or 'majority', got '" + policy + "'");
  p.candidate = c.text("resynth.candidate", "");

  fit_config fc;
  fc.w_m               = p.w_m;
  fc.w_r               = p.w_r;
  fc.descent.max_iters = p.fit_max_iters;
  fc.descent.tolerance = p.fit_tolerance;
  fc.intrinsics        = {1.0, vec2::Zero(), 1, 1};
  fc.validate();
  p.inpaint.seed = p.seed;
  p.inpaint.validate();
  if (p.latent_dim < 1 || p.latent_dim > geometry_dim) throw_parse("inpaint.latent_dim must be in [1, 195]");
  return p;
}

pipeline_config pipeline_config::read(const std::string& path) { return from(key_value_config::read(path)); }

// ---------------------------------------------------------------- files

face_model load_model(const pipeline_config& config) {
  require_file(config.model_path, "model");
  require_file(config.landmark_map_path, "landmark map");
  auto model               = read_model(config.model_path);
  model.anthropometric_map = read_anthropometric_map(config.landmark_map_path);
  model.validate();
  return model;
}

std::vector<Eigen::VectorXd> read_codes(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_io("cannot open codes file " + path);
  std::vector<Eigen::VectorXd> out;
  std::string                  line;
  int                          line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::istringstream  ls(t);
    std::vector<double> values;
    std::string         word;
    while (ls >> word) {
      std::size_t used = 0;
      double      v    = 0;
      try {
        v = std::stod(word, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != word.size() || !std::isfinite(v)) {
        throw_parse(path + ":" + std::to_string(line_no) + ": '" + word + "' is not a finite number");
      }
      values.push_back(v);
    }
    if (values.size() != static_cast<std::size_t>(geometry_dim) && values.size() != static_cast<std::size_t>(code_dim)) {
      throw_parse(path + ":" + std::to_string(line_no) + ": expected 195 or 228 values, found " +
                  std::to_string(values.size()));
    }
    out.push_back(Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size())));
  }
  return out;
}

void write_codes(const std::vector<Eigen::VectorXd>& codes, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw_io("cannot open " + path + " for writing");
  out << std::setprecision(17);
  for (const auto& c : codes) {
    for (Eigen::Index i = 0; i < c.size(); ++i) out << (i ? " " : "") << c[i];
    out << '\n';
  }
  if (!out) throw_io("failed writing " + path);
}

candidate_set read_candidate_dir(const std::string& directory) {
  if (!fs::is_directory(directory)) throw_io("candidate directory not found: " + directory);
  std::vector<fs::path> meshes;
  for (const auto& e : fs::directory_iterator(directory))
    if (e.is_regular_file() && e.path().extension() == ".obj") meshes.push_back(e.path());
  std::sort(meshes.begin(), meshes.end());
  candidate_set set;
  for (const auto& p : meshes) {
    const auto id = p.stem().string();
    set.faces.push_back({id, read_obj(p.string())});
    auto code_path = p;
    code_path.replace_extension(".code");
    if (fs::exists(code_path)) {
      const auto codes = read_codes(code_path.string());
      if (codes.size() != 1) throw_parse(code_path.string() + ": expected exactly one code");
      set.codes[id] = codes.front().head(geometry_dim);
    }
  }
  return set;
}

skull_annotation transform_skull(const skull_annotation& skull, const rigid_transform& t) {
  skull_annotation out = skull;
  for (auto& v : out.skull.vertices) v = t.apply(v);
  for (auto& [id, lm] : out.landmarks) {
    lm.position = t.apply(lm.position);
    lm.normal   = t.rotation * lm.normal;
  }
  return out;
}

int exit_code_for(error_kind kind) {
  switch (kind) {
    case error_kind::numerical: return 3;
    case error_kind::contract: return 4;
    default: return 2;
  }
}

// ---------------------------------------------------------------- synth

void synth_options::validate() const {
  if (candidates < 1) throw_invalid("synthetic dataset needs at least one candidate");
  if (latent_dim < 1 || latent_dim > geometry_dim) throw_invalid("latent dimension must be in [1, 195]");
  if (training < std::max(20, latent_dim + 1)) throw_invalid("training set must hold at least max(20, d_z + 1) codes");
  if (views < 1) throw_invalid("at least one landmark view is needed");
  if (perturb_depths && perturbed_count < 1) throw_invalid("perturbed depth count must be positive");
}

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::string candidate_name(int i) {
  std::ostringstream s;
  s << "cand_" << std::setw(3) << std::setfill('0') << i;
  return s.str();
}

}  // namespace

std::string synthesize_dataset(const synth_options& o, const std::string& out_dir) {
  o.validate();
  const fs::path dir(out_dir);
  fs::create_directories(dir / "candidates");
  fs::create_directories(dir / "landmarks");

  const std::map<std::string, std::uint64_t> seeds = {{"model", splitmix(o.seed ^ 1)}, {"population", splitmix(o.seed ^ 2)},
      {"truth", splitmix(o.seed ^ 3)}, {"candidates", splitmix(o.seed ^ 4)}, {"training", splitmix(o.seed ^ 5)},
      {"placement", splitmix(o.seed ^ 6)}, {"perturbation", splitmix(o.seed ^ 7)}};

  const auto model = synthesize_model(seeds.at("model"), o.vertices);
  write_model(model, (dir / "model.cfm").string());
  write_anthropometric_map(model.anthropometric_map, (dir / "landmark_map.txt").string());
  const auto seg = template_segmentation(model);
  write_segmentation(seg, (dir / "segmentation.txt").string());
  const auto pop = face_population::make(seeds.at("population"), o.latent_dim);

  const auto      depths = placeholder_tissue_table();
  std::mt19937_64 truth_rng(seeds.at("truth"));
  const auto      truth      = sample_ground_truth(pop, model, seg, depths, truth_rng);
  const auto&     truth_code = truth.code;
  const auto&     skull      = truth.skull;
  write_obj(truth.face, (dir / "face_truth.obj").string());
  write_codes({truth_code.geometry()}, (dir / "truth.code").string());
  write_obj(skull.skull, (dir / "skull.obj").string());
  write_skull_landmarks(skull.landmarks, (dir / "skull_landmarks.txt").string());

  auto             table = depths;
  std::vector<int> perturbed;
  if (o.perturb_depths) {
    std::vector<int> ids;
    for (const auto& [id, e] : depths.entries)
      if (id != 1) ids.push_back(id);  // keep d_1: it also fixes the definite-region offset
    if (o.perturbed_count > static_cast<int>(ids.size())) throw_invalid("too many perturbed depths requested");
    std::mt19937_64 prng(seeds.at("perturbation"));
    std::shuffle(ids.begin(), ids.end(), prng);
    perturbed.assign(ids.begin(), ids.begin() + o.perturbed_count);
    std::sort(perturbed.begin(), perturbed.end());
    for (int id : perturbed) table.entries[id].depth += 2 * table.entries[id].eta + 1;
  }
  write_tissue_table(table, (dir / "depths.csv").string());

  std::mt19937_64 place_rng(seeds.at("placement"));
  const int       truth_index = static_cast<int>(place_rng() % static_cast<std::uint64_t>(o.candidates));
  std::mt19937_64 cand_rng(seeds.at("candidates"));
  std::string     mismatched;
  for (int i = 0; i < o.candidates; ++i) {
    const auto            id  = candidate_name(i);
    const Eigen::VectorXd geo = i == truth_index ? Eigen::VectorXd(truth_code.geometry()) : pop.sample_geometry(cand_rng);
    if (i != truth_index && mismatched.empty()) mismatched = id;
    write_obj(evaluate(model, geo), (dir / "candidates" / (id + ".obj")).string());
    write_codes({geo}, (dir / "candidates" / (id + ".code")).string());
  }

  std::mt19937_64              train_rng(seeds.at("training"));
  std::vector<Eigen::VectorXd> training;
  for (int i = 0; i < o.training; ++i) training.push_back(pop.sample_geometry(train_rng));
  write_codes(training, (dir / "training_codes.txt").string());

  const auto               intr = canonical_setup_for(model).intrinsics;
  std::vector<std::string> views;
  for (int k = 0; k < o.views; ++k) {
    const double yaw  = k == 0 ? 0.0 : (k % 2 ? 1.0 : -1.0) * 0.15 * ((k + 1) / 2);
    const auto   code = orbit_camera(truth_code, vec3(0, yaw, 0));
    const auto   name = "landmarks/view_" + std::to_string(k) + ".txt";
    write_landmarks(render_landmarks(model, code, intr), (dir / name).string());
    views.push_back(name);
  }

  std::ostringstream cfg;
  cfg << "# Synthetic dataset, seed " << o.seed << "\n"
      << "seed = " << o.seed << "\n"
      << "paths.model = model.cfm\n"
      << "paths.landmark_map = landmark_map.txt\n"
      << "paths.skull_mesh = skull.obj\n"
      << "paths.skull_landmarks = skull_landmarks.txt\n"
      << "paths.depth_table = depths.csv\n"
      << "paths.candidates = candidates\n"
      << "paths.segmentation = segmentation.txt\n"
      << "paths.training = training_codes.txt\n"
      << "paths.landmarks = ";
  for (std::size_t k = 0; k < views.size(); ++k) cfg << (k ? "," : "") << views[k];
  cfg << "\nfit.same_person = true\n"
      << "superimposition.alignment = identity\n"
      << "inpaint.latent_dim = " << o.latent_dim << "\n"
      << "resynth.candidate = " << mismatched << "\n";
  write_text(dir / "config.ini", cfg.str());

  json m;
  m["seed"] = o.seed;
  json js   = json::object();
  for (const auto& [k, v] : seeds) js[k] = v;
  m["derived_seeds"]          = js;
  m["vertices"]               = o.vertices;
  m["latent_dim"]             = o.latent_dim;
  m["candidates"]             = o.candidates;
  m["training_codes"]         = o.training;
  m["truth_draws"]            = truth.attempts;
  m["ground_truth_candidate"] = candidate_name(truth_index);
  m["mismatched_candidate"]   = mismatched;
  m["perturbed_depth_ids"]    = perturbed;
  m["expected_unmatched"]     = perturbed.size();
  m["landmark_views"]         = views;
  m["files"] = {"model.cfm", "landmark_map.txt", "segmentation.txt", "face_truth.obj", "truth.code", "skull.obj", "skull_landmarks.txt",
      "depths.csv", "candidates/", "training_codes.txt", "landmarks/", "config.ini"};
  const auto text = m.dump(2) + "\n";
  write_text(dir / "manifest.json", text);
  return text;
}

// ---------------------------------------------------------------- commands

std::string cmd_fit(const pipeline_config& config, std::ostream& out) {
  if (config.landmark_paths.empty()) throw_invalid("fit needs at least one landmark file");
  for (const auto& p : config.landmark_paths) require_file(p, "landmark file");
  const auto                model = load_model(config);
  std::vector<landmark_set> sets;
  for (const auto& p : config.landmark_paths) sets.push_back(reduce_landmarks(read_landmarks(p)));

  auto cfg              = default_fit_config(model);
  cfg.w_m               = config.w_m;
  cfg.w_r               = config.w_r;
  cfg.descent.max_iters = config.fit_max_iters;
  cfg.descent.tolerance = config.fit_tolerance;
  cfg.validate();
  const auto init = default_initial_code(model);

  const fs::path dir(config.out_dir);
  fs::create_directories(dir);
  json report;
  report["command"] = "fit";
  report["inputs"]  = config.landmark_paths;
  json fits         = json::array();

  const auto describe = [&](const semantic_code& code, const loss_terms& loss, const landmark_set& target) {
    json f;
    f["loss"]            = {{"total", loss.total}, {"e_m", loss.e_m}, {"e_r", loss.e_r}};
    f["landmark_rms_px"] = landmark_rms(render_landmarks(model, code, cfg.intrinsics), target, true);
    f["code"]            = vector_json(code.values);
    return f;
  };

  out << std::left << std::setw(28) << "input" << std::setw(14) << "loss" << std::setw(12) << "rms px" << "iters\n";
  if (sets.size() > 1 && config.same_person) {
    const auto r = fit_multi(model, sets, cfg, init);
    write_obj(evaluate(model, r.geometry), (dir / "fit_mesh.obj").string());
    report["mode"]       = "multi";
    report["mesh"]       = "fit_mesh.obj";
    report["geometry"]   = vector_json(r.geometry);
    report["total_loss"] = r.total_loss;
    report["iterations"] = r.iterations;
    report["converged"]  = r.converged;
    for (std::size_t j = 0; j < sets.size(); ++j) {
      auto f         = describe(r.codes[j], r.per_image[j], sets[j]);
      f["source"]    = config.landmark_paths[j];
      f["rendering"] = vector_json(r.codes[j].rendering());
      fits.push_back(f);
      out << std::setw(28) << fs::path(config.landmark_paths[j]).filename().string() << std::setw(14)
          << r.per_image[j].total << std::setw(12) << f["landmark_rms_px"].get<double>() << r.iterations << '\n';
    }
  } else {
    report["mode"] = sets.size() == 1 ? "single" : "independent";
    for (std::size_t j = 0; j < sets.size(); ++j) {
      const auto r    = fit_single(model, sets[j], cfg, init);
      const auto name = sets.size() == 1 ? std::string("fit_mesh.obj") : "fit_mesh_" + std::to_string(j) + ".obj";
      write_obj(evaluate(model, r.code.geometry()), (dir / name).string());
      auto f           = describe(r.code, r.loss, sets[j]);
      f["source"]      = config.landmark_paths[j];
      f["mesh"]        = name;
      f["iterations"]  = r.iterations;
      f["converged"]   = r.converged;
      f["stop_reason"] = r.stop_reason;
      fits.push_back(f);
      out << std::setw(28) << fs::path(config.landmark_paths[j]).filename().string() << std::setw(14) << r.loss.total
          << std::setw(12) << f["landmark_rms_px"].get<double>() << r.iterations << '\n';
    }
  }
  report["fits"]  = fits;
  const auto text = report.dump(2) + "\n";
  write_text(dir / "fit_report.json", text);
  return text;
}

namespace {

struct ranking_inputs {
  face_model       model;
  skull_annotation skull;
  tissue_table     depths;
  candidate_set    candidates;
};

ranking_inputs load_ranking_inputs(const pipeline_config& config) {
  require_file(config.skull_mesh_path, "skull mesh");
  require_file(config.skull_landmarks_path, "skull landmarks");
  require_file(config.depth_table_path, "depth table");
  if (config.candidates_dir.empty()) throw_invalid("config is missing the candidates path");
  ranking_inputs in;
  in.model  = load_model(config);
  in.skull  = load_skull(config.skull_mesh_path, config.skull_landmarks_path);
  in.depths = read_tissue_table(config.depth_table_path);
  in.depths.validate(in.model);
  in.candidates = read_candidate_dir(config.candidates_dir);
  if (in.candidates.faces.empty()) throw_invalid("candidate directory " + config.candidates_dir + " holds no .obj meshes");
  return in;
}

void print_ranking(const std::vector<ranked_candidate>& ranking, std::ostream& out, std::size_t limit) {
  out << std::left << std::setw(6) << "rank" << std::setw(20) << "candidate" << std::setw(10) << "score" << std::setw(9)
      << "matched" << std::setw(11) << "unmatched" << "mean mm\n";
  for (std::size_t i = 0; i < ranking.size() && i < limit; ++i) {
    const auto& r = ranking[i];
    out << std::setw(6) << i + 1 << std::setw(20) << r.id << std::setw(10) << format_percent(r.score) << std::setw(9)
        << r.matched << std::setw(11) << r.unmatched << std::fixed << std::setprecision(3) << r.mean_distance
        << std::defaultfloat << std::setprecision(6) << '\n';
  }
}

}  // namespace

std::string cmd_rank(const pipeline_config& config, std::ostream& out) {
  const auto in      = load_ranking_inputs(config);
  const auto ranking = rank_candidates(in.skull, in.depths, in.model, in.candidates.faces,
      alignment_for(config.alignment_mode), config.threads);
  const fs::path dir(config.out_dir);
  fs::create_directories(dir);
  const auto text = ranking_report_json(ranking) + "\n";
  write_text(dir / "ranking.json", text);
  print_ranking(ranking, out, ranking.size());
  return text;
}

std::string cmd_resynth(const pipeline_config& config, std::ostream& out) {
  stage_clock clock;

  // Everything is read and validated before the first output file.
  const auto in = clock.run("load", [&] {
    auto r = load_ranking_inputs(config);
    require_file(config.training_path, "training codes");
    if (!config.segmentation_path.empty()) require_file(config.segmentation_path, "segmentation");
    return r;
  });
  const auto seg = clock.run("segmentation", [&] {
    return config.segmentation_path.empty() ? template_segmentation(in.model)
                                            : read_segmentation(config.segmentation_path, in.model);
  });
  const auto training = clock.run("training", [&] {
    std::vector<semantic_code> codes;
    for (const auto& c : read_codes(config.training_path)) {
      semantic_code s;
      s.geometry() = c.head(geometry_dim);
      codes.push_back(s);
    }
    return codes;
  });
  const auto align = alignment_for(config.alignment_mode);

  const auto ranking = clock.run("rank", [&] {
    return rank_candidates(in.skull, in.depths, in.model, in.candidates.faces, align, config.threads);
  });
  const std::string chosen = config.candidate.empty() ? ranking.front().id : config.candidate;
  const auto        face_it = std::find_if(in.candidates.faces.begin(), in.candidates.faces.end(),
             [&](const candidate& c) { return c.id == chosen; });
  if (face_it == in.candidates.faces.end()) throw_invalid("select: candidate '" + chosen + "' is not in the candidate set");
  if (!in.candidates.codes.count(chosen)) {
    throw_invalid("select: candidate '" + chosen + "' has no .code file; re-synthesis needs its geometry code");
  }
  const Eigen::VectorXd chosen_geometry = in.candidates.codes.at(chosen);

  const auto initial = clock.run("superimpose", [&] { return superimpose(face_it->face, in.model, in.skull, in.depths, align); });
  // Constraints live in the face frame: move the skull by the inverse of the
  // face placement.
  const auto skull_face = transform_skull(in.skull, initial.face_transform.inverse());
  const auto removed    = clock.run("select", [&] { return select_unmatched_regions(seg, initial, config.policy); });

  const fs::path dir(config.out_dir);
  fs::create_directories(dir);
  json report;
  report["command"]   = "resynth";
  report["candidate"] = chosen;
  report["ranking"]   = json::parse(ranking_report_json(ranking));
  report["removed_regions"] = json::array();
  for (int r : removed) report["removed_regions"].push_back({{"id", r}, {"name", seg.region(r).name}});
  report["initial"] = json::parse(superimposition_report_json(initial));

  mesh                   final_face = face_it->face;
  superimposition_result final_sup  = initial;
  json                   artifacts  = json::object();
  if (removed.empty()) {
    report["inpainting"] = nullptr;
  } else {
    const auto candidate_code = canonical_code(in.model, chosen_geometry);
    const auto masked = clock.run("mask", [&] { return build_mask(in.model, candidate_code, removed, seg); });
    inpaint_problem problem;
    problem.y           = masked.y.color;
    problem.B           = masked.B;
    problem.constraints = make_geometry_constraints(skull_face, in.depths, seg);
    problem.settings    = config.inpaint;
    const auto gan      = clock.run("generator", [&] { return reference_gan(in.model, training, config.latent_dim, config.seed); });
    const auto result   = clock.run("inpaint", [&] { return solve(problem, *gan.generator, *gan.discriminator, in.model); });
    final_face          = result.face;
    final_sup           = clock.run("resuperimpose", [&] {
      return superimpose(final_face, in.model, in.skull, in.depths, alignment::fixed(initial.face_transform));
    });

    clock.run("write", [&] {
      write_problem_bundle(problem, (dir / "problem").string());
      write_ppm(result.image.color, (dir / "inpainted.ppm").string());
      write_loss_trace(result.trace, (dir / "loss_trace.csv").string());
    });
    artifacts["problem"]    = "problem";
    artifacts["inpainted"]  = "inpainted.ppm";
    artifacts["loss_trace"] = "loss_trace.csv";
    const auto& t           = result.final_terms;
    report["inpainting"]    = {{"iterations", result.iterations}, {"stop_reason", result.stop_reason},
        {"final_loss", {{"Lc", t.context}, {"Lp", t.prior}, {"Lg", t.geometry}}},
        {"geometry_loss_zero", t.geometry < 1e-6}, {"latent", vector_json(result.z)},
        {"geometry", vector_json(result.code.geometry())}};
  }
  write_obj(final_face, (dir / "final_face.obj").string());
  artifacts["final_face"] = "final_face.obj";
  report["final"]         = json::parse(superimposition_report_json(final_sup));
  report["artifacts"]     = artifacts;
  report["timings"]       = clock.timings();

  const auto text = report.dump(2) + "\n";
  write_text(dir / "report.json", text);

  out << "candidate " << chosen << "\nremoved regions:";
  if (removed.empty()) out << " none";
  for (int r : removed) out << ' ' << seg.region(r).name;
  out << "\ninitial score " << format_percent(initial.score) << "  final score " << format_percent(final_sup.score) << '\n';
  if (!removed.empty()) {
    const auto& fl = report["inpainting"]["final_loss"];
    out << "final loss Lc " << fl["Lc"].get<double>() << "  Lp " << fl["Lp"].get<double>() << "  Lg "
        << fl["Lg"].get<double>() << '\n';
  }
  for (const auto& t : report["timings"]) out << "  " << std::left << std::setw(16) << t["stage"].get<std::string>() << t["seconds"].get<double>() << " s\n";
  return text;
}

std::string cmd_gradcheck(const face_model& model, const gradient_check_options& options, const std::string& out_dir,
    std::ostream& out) {
  options.validate();
  const auto rows = run_gradient_checks(model, options);
  json       j    = json::array();
  std::map<std::string, double> worst;
  bool       all  = true;
  for (const auto& r : rows) {
    j.push_back({{"term", r.term}, {"configuration", r.configuration}, {"max_relative_error", r.max_relative_error},
        {"passed", r.passed}});
    worst[r.term] = std::max(worst[r.term], r.max_relative_error);
    all           = all && r.passed;
  }
  out << std::left << std::setw(22) << "term" << std::setw(8) << "configs" << std::setw(16) << "max rel error" << "status\n";
  for (const auto& [term, w] : worst) {
    int n = 0, failed = 0;
    for (const auto& r : rows)
      if (r.term == term) {
        ++n;
        failed += r.passed ? 0 : 1;
      }
    out << std::setw(22) << term << std::setw(8) << n << std::setw(16) << std::scientific << std::setprecision(3) << w
        << std::defaultfloat << (failed ? "FAIL (" + std::to_string(failed) + ")" : std::string("pass")) << '\n';
  }
  json report = {{"command", "gradcheck"}, {"seed", options.seed}, {"count", options.count},
      {"tolerance", options.tolerance}, {"all_passed", all}, {"rows", j}};
  const auto text = report.dump(2) + "\n";
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_text(fs::path(out_dir) / "gradcheck.json", text);
  }
  return text;
}

}  // namespace craniofit
