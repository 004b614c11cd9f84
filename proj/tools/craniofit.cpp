#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "craniofit/pipeline.hpp"

using namespace craniofit;

namespace {

struct common_flags {
  std::string                  config;
  std::optional<std::uint64_t> seed;
  std::string                  out;
};

void add_common(CLI::App* cmd, common_flags& f, bool config_required) {
  auto* c = cmd->add_option("--config", f.config, "key=value configuration file");
  if (config_required) c->required();
  c->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "seed overriding the configuration");
  cmd->add_option("--out", f.out, "output directory");
}

pipeline_config load(const common_flags& f) {
  auto kv = key_value_config::read(f.config);
  if (f.seed) kv.set("seed", std::to_string(*f.seed));
  auto cfg = pipeline_config::from(kv);
  if (!f.out.empty()) cfg.out_dir = f.out;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Craniofacial reconstruction: landmark fitting, skull superimposition and constrained re-synthesis"};
  app.require_subcommand(1);

  common_flags fit_f, rank_f, resynth_f, grad_f, synth_f;

  auto*                    fit = app.add_subcommand("fit", "fit the face model to 2D landmark files");
  std::vector<std::string> landmark_files;
  bool                     same_person = false;
  add_common(fit, fit_f, true);
  fit->add_option("landmarks", landmark_files, "landmark files (override paths.landmarks)")->check(CLI::ExistingFile);
  fit->add_flag("--same-person", same_person, "share shape and expression across all inputs");

  auto* rank = app.add_subcommand("rank", "rank candidate faces against a skull");
  add_common(rank, rank_f, true);

  auto* resynth = app.add_subcommand("resynth", "rank, superimpose and re-synthesise unmatched regions");
  add_common(resynth, resynth_f, true);

  auto*         grad  = app.add_subcommand("gradcheck", "compare analytic gradients with finite differences");
  int           count = 10;
  std::string   corrupt;
  add_common(grad, grad_f, false);
  std::vector<std::string> terms;
  grad->add_option("--count", count, "random configurations per term");
  grad->add_option("--term", terms, "restrict to these terms (repeatable)");
  grad->add_option("--corrupt-term", corrupt)->group("");

  auto*         synth = app.add_subcommand("synth", "write a synthetic dataset with a ready config.ini");
  synth_options so;
  add_common(synth, synth_f, false);
  synth->add_option("--candidates", so.candidates, "number of candidate faces");
  synth->add_option("--vertices", so.vertices, "model vertex count");
  synth->add_flag("--perturb-depths", so.perturb_depths, "offset some tissue depths so their landmarks are unmatched");
  synth->add_option("--perturbed-count", so.perturbed_count, "how many depths to offset");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (fit->parsed()) {
      auto cfg = load(fit_f);
      if (!landmark_files.empty()) cfg.landmark_paths = landmark_files;
      if (same_person) cfg.same_person = true;
      cmd_fit(cfg, std::cout);
    } else if (rank->parsed()) {
      cmd_rank(load(rank_f), std::cout);
    } else if (resynth->parsed()) {
      cmd_resynth(load(resynth_f), std::cout);
    } else if (grad->parsed()) {
      gradient_check_options opts;
      opts.count        = count;
      opts.corrupt_term = corrupt;
      opts.terms        = terms;
      opts.validate();
      face_model model;
      std::string out_dir = grad_f.out;
      if (!grad_f.config.empty()) {
        auto cfg   = load(grad_f);
        opts.seed  = cfg.seed;
        model      = load_model(cfg);
        if (out_dir.empty()) out_dir = cfg.out_dir;
      } else {
        opts.seed = grad_f.seed.value_or(1);
        model     = synthesize_model(opts.seed, 2562);
      }
      const auto report = cmd_gradcheck(model, opts, out_dir, std::cout);
      return report.find("\"all_passed\": true") != std::string::npos ? 0 : 1;
    } else if (synth->parsed()) {
      if (!synth_f.config.empty()) throw_invalid("synth does not take a configuration file");
      so.seed = synth_f.seed.value_or(1);
      std::cout << synthesize_dataset(so, synth_f.out.empty() ? "craniofit-synth" : synth_f.out);
    }
  } catch (const error& e) {
    std::cerr << "craniofit: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "craniofit: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
