#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "flowdehaze/commands.hpp"
#include "flowdehaze/error.hpp"

namespace fd = flowdehaze;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<int> steps_t;
  std::optional<int> samples;
  std::optional<fs::path> checkpoint;
  std::optional<fs::path> out;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "experiment config (JSON) or run manifest");
  app->add_option("--seed", c.seed, "seed for this command (simulate: signal/noise, train: training, else sampling)");
  app->add_option("--steps-t", c.steps_t, "Euler steps / time grid size T");
  app->add_option("--samples", c.samples, "posterior samples k");
  app->add_option("--checkpoint", c.checkpoint, "checkpoint path");
  app->add_option("--out", c.out, "output directory");
  app->add_option("--override", c.overrides, "KEY=VALUE config override, repeatable")->take_all();
}

// Flag overrides go through the same path as --override so validation is shared.
fd::ExperimentConfig configure(const Common& c, const std::string& command) {
  std::vector<std::string> ov = c.overrides;
  if (c.seed) {
    const std::string s = std::to_string(*c.seed);
    if (command == "simulate") {
      ov.push_back("dataset.signal.seed=" + s);
      ov.push_back("dataset.noise.seed=" + s);
    } else if (command == "train") {
      ov.push_back("train.seed=" + s);
    } else {
      ov.push_back("sample.seed=" + s);
    }
  }
  if (c.steps_t) {
    ov.push_back("sample.steps_T=" + std::to_string(*c.steps_t));
    if (command == "train") ov.push_back("train.steps_T=" + std::to_string(*c.steps_t));
  }
  if (c.samples) ov.push_back("sample.n_samples=" + std::to_string(*c.samples));
  auto cfg = fd::resolve_config(c.config, ov);
  if (c.checkpoint) cfg.paths.checkpoint = *c.checkpoint;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flowdehaze: guided flow matching for microscopy dehazing"};
  app.require_subcommand(1);
  app.set_version_flag("--version", fd::kVersion);

  Common sim_c, train_c, pred_c, cal_c, eval_c;
  auto* sim = app.add_subcommand("simulate", "generate paired hazy/clean datasets");
  add_common(sim, sim_c);

  auto* train = app.add_subcommand("train", "train the velocity field");
  add_common(train, train_c);
  std::optional<fs::path> resume;
  train->add_option("--resume", resume, "continue from this checkpoint");

  auto* pred = app.add_subcommand("predict", "sample posteriors for hazy inputs");
  add_common(pred, pred_c);
  std::optional<fs::path> pred_input;
  std::string pred_split = "test";
  pred->add_option("--input", pred_input, "raster file or directory (default: hazy images of --split)");
  pred->add_option("--split", pred_split, "dataset split when --input is absent");

  auto* cal = app.add_subcommand("calibrate", "fit the uncertainty calibration");
  add_common(cal, cal_c);
  fs::path cal_preds;
  std::optional<std::string> cal_split;
  std::optional<fs::path> cal_apply;
  cal->add_option("--predictions", cal_preds, "predictions directory for the fit split")->required();
  cal->add_option("--split", cal_split, "fit split (default from config)");
  cal->add_option("--apply", cal_apply, "predictions directory for the apply split");

  auto* ev = app.add_subcommand("evaluate", "score predictions against ground truth");
  add_common(ev, eval_c);
  fd::EvaluateOptions eval_opts;
  bool t_sweep = false;
  ev->add_option("--predictions", eval_opts.predictions, "predictions directory")->required();
  ev->add_option("--split", eval_opts.split, "dataset split");
  ev->add_flag("--t-sweep", t_sweep, "re-sample at each T of evaluation.t_sweep");

  auto* show = app.add_subcommand("config", "print the resolved config as JSON");
  Common show_c;
  add_common(show, show_c);
  std::string profile = "default";
  show->add_option("--profile", profile, "starting point when --config is absent")->check(CLI::IsMember({"default", "toy"}));

  auto* plot = app.add_subcommand("plot", "re-render figures from a report");
  fs::path plot_report;
  std::optional<fs::path> plot_out;
  plot->add_option("report", plot_report, "calibration or evaluation report JSON")->required();
  plot->add_option("--out", plot_out, "output directory (default: next to the report)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error code=2 kind=config message=" << e.what() << '\n';
    return 2;
  }

  try {
    if (*sim) {
      auto cfg = configure(sim_c, "simulate");
      if (sim_c.out) cfg.paths.dataset_dir = *sim_c.out;
      fd::cmd_simulate(cfg, std::cout);
    } else if (*train) {
      auto cfg = configure(train_c, "train");
      if (train_c.out) cfg.paths.workdir = *train_c.out;
      fd::cmd_train(cfg, {resume}, std::cout);
    } else if (*pred) {
      const auto cfg = configure(pred_c, "predict");
      fd::PredictOptions o;
      o.input = pred_input;
      o.split = pred_split;
      o.out_dir = pred_c.out ? *pred_c.out : cfg.paths.workdir / "predictions" / pred_split;
      fd::cmd_predict(cfg, o, std::cout);
    } else if (*cal) {
      const auto cfg = configure(cal_c, "calibrate");
      fd::CalibrateOptions o{cal_preds, cal_split, cal_apply, cal_c.out ? *cal_c.out : cfg.paths.workdir / "calibration"};
      fd::cmd_calibrate(cfg, o, std::cout);
    } else if (*ev) {
      const auto cfg = configure(eval_c, "evaluate");
      eval_opts.out_dir = eval_c.out ? *eval_c.out : cfg.paths.workdir / "evaluation";
      if (t_sweep) eval_opts.t_sweep_checkpoint = cfg.checkpoint_path();
      fd::cmd_evaluate(cfg, eval_opts, std::cout);
    } else if (*show) {
      fd::ExperimentConfig cfg;
      if (show_c.config || profile == "default") {
        cfg = configure(show_c, "config");
      } else {
        nlohmann::json j = fd::to_json(fd::ExperimentConfig::toy());
        for (const auto& o : show_c.overrides) fd::apply_override(j, o);
        cfg = fd::config_from_json(j);
        cfg.validate();
      }
      std::cout << fd::to_json(cfg).dump(2) << '\n';
    } else if (*plot) {
      fd::cmd_plot(plot_report, plot_out ? *plot_out : plot_report.parent_path(), std::cout);
    }
  } catch (const fd::Error& e) {
    std::string msg = e.what();
    for (char& ch : msg) {
      if (ch == '\n') ch = ' ';
    }
    std::cerr << "error code=" << e.exit_code() << " kind=" << fd::error_kind_name(e.kind()) << " message=" << msg << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error code=3 kind=data message=" << e.what() << '\n';
    return 3;
  }
  return 0;
}
