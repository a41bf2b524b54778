#include <CLI11.hpp>

#include "quadleague/cli.hpp"

// Command-line front end: train/evaluate/sweep/demo plus plot-data export.
int main(int argc, char** argv) {
  CLI::App app{"quadleague: multi-agent quadrotor racing simulator and league-play trainer"};
  app.require_subcommand(1);

  quadleague::RunConfig rc;
  std::vector<std::string> set_args;
  int races = 0;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--preset", rc.preset, "configuration preset: paper | desk")
        ->check(CLI::IsMember({"paper", "desk"}));
    cmd->add_option("--seed", rc.seed, "run seed");
    cmd->add_option("--config", rc.config_file, "config file (key = value lines)");
    cmd->add_option("--set", set_args, "config override key=value (repeatable)");
    cmd->add_option("--track", rc.track_file, "track file (x y z yaw_deg per gate)");
    cmd->add_option("--out", rc.out_dir, "output directory");
  };

  for (const char* mode : {"train-league", "train-independent", "train-single"}) {
    auto* cmd = app.add_subcommand(mode);
    add_common(cmd);
    if (std::string(mode) == "train-league")
      cmd->add_option("--roster", rc.roster, "league roster checkpoint (repeatable)");
  }

  auto* se = app.add_subcommand("self-eval");
  add_common(se);
  se->add_option("--checkpoint", rc.checkpoints, "policy checkpoint")->required();
  se->add_option("--agents", rc.agents_min, "agent count (1..8)");
  se->add_option("--agents-max", rc.agents_max, "sweep agent counts up to this");
  se->add_option("--races", races, "races per configuration");

  auto* to = app.add_subcommand("tournament");
  add_common(to);
  to->add_option("--checkpoint", rc.checkpoints, "pool checkpoint (repeatable)")->required();
  to->add_option("--label", rc.labels, "method label per checkpoint (repeatable)");
  to->add_option("--races", races, "races per configuration");

  auto* vs = app.add_subcommand("value-sweep");
  add_common(vs);
  vs->add_option("--checkpoint", rc.checkpoints, "policy checkpoint")->required();
  vs->add_option("--opponent", rc.sweep_opponents,
                 "opponent x,y,z[,vx,vy,vz] (repeatable)")
      ->delimiter(',');
  vs->add_option("--grid", rc.sweep_grid, "x0,x1,nx,z0,z1,nz")->delimiter(',');
  vs->add_option("--y", rc.sweep_y, "fixed Y of the sweep plane");
  vs->add_option("--next-gate", rc.sweep_next_gate, "target gate index of the frozen scene");

  auto* dw = app.add_subcommand("downwash-demo");
  add_common(dw);
  dw->add_option("--policy-with", rc.policy_with, "checkpoint trained with downwash");
  dw->add_option("--policy-without", rc.policy_without, "checkpoint trained without downwash");

  auto* ep = app.add_subcommand("export-plot");
  ep->add_option("--results", rc.results_dir, "results directory of a previous run")->required();
  ep->add_option("--figure", rc.figure,
                 "completion-vs-agents | crash-types | rank-dist | value-field | downwash-traces")
      ->required();
  ep->add_option("--out", rc.out_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : quadleague::kExitConfigError;
  }

  for (const auto& kv : set_args) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::cerr << "config error: --set expects key=value, got '" << kv << "'\n";
      return quadleague::kExitConfigError;
    }
    rc.overrides.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (races > 0) rc.overrides.emplace_back("eval.races", std::to_string(races));

  rc.mode = app.get_subcommands().front()->get_name();
  return quadleague::run(rc);
}
