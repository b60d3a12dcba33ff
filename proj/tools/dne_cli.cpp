#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dne/error.hpp"
#include "dne/harness.hpp"

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "experiment config file")->check(CLI::ExistingFile);
  cmd->add_option("-s,--set", c.overrides, "override, section.key=value (repeatable)");
}

dne::ExperimentSpec spec_of(const Common& c) {
  return c.config.empty() ? dne::default_spec(c.overrides) : dne::load_spec(c.config, c.overrides);
}

fs::path checkpoint_of(const dne::ExperimentSpec& spec, const std::string& given) {
  return given.empty() ? spec.output_dir / "model.ckpt" : fs::path(given);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dirichlet neighborhood ensemble: training, smoothing and attacks"};
  app.require_subcommand(1);

  Common gen_opts, train_opts, eval_opts, attack_opts, sweep_opts, ablate_opts, compare_opts;
  std::string eval_ckpt, attack_ckpt;

  auto* gen = app.add_subcommand("gen-data", "write the synthetic corpus to the data directory");
  add_common(gen, gen_opts);
  auto* trn = app.add_subcommand("train", "train a classifier and save the best checkpoint");
  add_common(trn, train_opts);
  auto* evl = app.add_subcommand("eval", "clean accuracy of the deployed predictor on the test split");
  add_common(evl, eval_opts);
  evl->add_option("--checkpoint", eval_ckpt, "checkpoint (default: <output_dir>/model.ckpt)");
  auto* atk = app.add_subcommand("attack", "attack a trained checkpoint");
  add_common(atk, attack_opts);
  atk->add_option("--checkpoint", attack_ckpt, "checkpoint (default: <output_dir>/model.ckpt)");
  auto* swp = app.add_subcommand("sweep", "alpha x lambda grid");
  add_common(swp, sweep_opts);
  auto* abl = app.add_subcommand("ablate", "full model plus one row per disabled component");
  add_common(abl, ablate_opts);
  auto* cmp = app.add_subcommand("compare", "ORIG, RAN and DNE side by side");
  add_common(cmp, compare_opts);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const auto spec = spec_of(gen_opts);
      const fs::path dir = spec.data.train.parent_path();
      dne::generate_synthetic(spec.corpus, dir);
      std::cout << "wrote corpus to " << dir.string() << '\n';
    } else if (trn->parsed()) {
      const auto spec = spec_of(train_opts);
      const auto ws = dne::load_workspace(spec);
      dne::TrainResult result;
      dne::train_model(spec, ws, &result);
      for (const auto& m : result.epochs) std::cout << dne::to_json_line(m) << '\n';
      std::cout << "best epoch " << result.best_epoch << ", val acc " << result.best_val_acc
                << (result.diverged ? " (diverged)" : "") << '\n';
      if (result.diverged) return 2;
    } else if (evl->parsed()) {
      const auto spec = spec_of(eval_opts);
      const auto ws = dne::load_workspace(spec);
      const auto model = dne::load_checkpoint(checkpoint_of(spec, eval_ckpt));
      const double acc = dne::evaluate_clean(spec, model, ws);
      nlohmann::ordered_json j;
      j["predictor"] = spec.smoothed() ? "smoothed" : "base";
      j["test_examples"] = ws.test.size();
      j["clean_acc"] = acc;
      fs::create_directories(spec.output_dir);
      std::ofstream(spec.output_dir / "eval.json") << j.dump(1) << '\n';
      std::cout << j.dump() << '\n';
    } else if (atk->parsed()) {
      const auto spec = spec_of(attack_opts);
      const auto ws = dne::load_workspace(spec);
      const auto model = dne::load_checkpoint(checkpoint_of(spec, attack_ckpt));
      const auto cell = dne::attack_model(spec, model, ws);
      dne::write_summary({cell}, spec.output_dir);
      std::cout << dne::format_table({cell});
    } else {
      std::vector<dne::CellResult> cells;
      if (swp->parsed()) cells = dne::run_sweep(spec_of(sweep_opts));
      else if (abl->parsed()) cells = dne::run_ablation(spec_of(ablate_opts));
      else cells = dne::run_comparison(spec_of(compare_opts));
      std::cout << dne::format_table(cells);
      for (const auto& c : cells)
        if (!c.ok) return 3;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
