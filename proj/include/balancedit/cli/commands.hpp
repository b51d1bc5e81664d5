#pragma once

#include <optional>
#include <ostream>
#include <string>

#include "balancedit/cli/run_config.hpp"

namespace balancedit::cli {

// Resolved inputs for one command. Unset paths default to files inside `out`.
struct CommandOptions {
    RunConfig config;
    std::string out = "out";
    std::optional<std::string> world;
    std::optional<std::string> suite;
    std::optional<std::string> checkpoint;
    std::optional<std::string> codebook;
    std::optional<std::string> case_id;
    std::optional<std::string> probe;  // inspect: black | rephrase:N | image:N | locality:N
    std::optional<int> sequential;
    bool single = false;
    bool ablations = false;

    std::string world_path() const;
    std::string suite_path() const;
    std::string checkpoint_path() const;
};

// Each writes its outputs under options.out (created if needed) plus config.json,
// and returns the process exit code. Failures throw balancedit::Error.
int cmd_worldgen(const CommandOptions& options, std::ostream& log);
int cmd_pretrain(const CommandOptions& options, std::ostream& log);
int cmd_edit(const CommandOptions& options, std::ostream& log);
int cmd_eval(const CommandOptions& options, std::ostream& log);
int cmd_sweep(const CommandOptions& options, std::ostream& log);
int cmd_inspect(const CommandOptions& options, std::ostream& log);

}  // namespace balancedit::cli
