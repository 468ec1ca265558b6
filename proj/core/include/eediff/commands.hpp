#pragma once

#include "eediff/config.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace eediff {

// Everything a subcommand needs from the command line. Flag values such as
// --threshold are folded into `overrides` by the front end.
struct CommandOptions {
  std::optional<std::filesystem::path> config_path;
  std::vector<std::string> overrides;
  std::optional<std::filesystem::path> out;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> samples;  // eval: score an existing archive
  bool quiet = false;
};

// Output directory: --out, else $EEDIFF_RUNS_DIR/<command>, else
// paths.out_root/<command>.
std::filesystem::path resolve_out_dir(const std::string& command, const CommandOptions& opts,
                                      const RunConfig& config);

// Config for a command that starts from a checkpoint: the checkpoint's own
// config, then the config file (if any), then overrides. Keys that shape the
// trained network must agree with the checkpoint.
RunConfig resolve_inference_config(const RunConfig& saved, const CommandOptions& opts);

int cmd_train(const CommandOptions& opts, std::ostream& log);
int cmd_sample(const CommandOptions& opts, std::ostream& log);
int cmd_eval(const CommandOptions& opts, std::ostream& log);
int cmd_profile(const CommandOptions& opts, std::ostream& log);
int cmd_sweep(const CommandOptions& opts, std::ostream& log);

// Maps exceptions onto exit statuses: 0 ok, 2 config error, 3 anything else.
int run_command(const std::string& name, const CommandOptions& opts, std::ostream& log,
                std::ostream& err);

}  // namespace eediff
