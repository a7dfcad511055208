#ifndef CTSYNTH_TOOLS_CLI_HPP
#define CTSYNTH_TOOLS_CLI_HPP

#include <ostream>
#include <string>
#include <vector>

#include "ctsynth/config.hpp"

namespace ctsynth {

enum ExitCode { kExitOk = 0, kExitData = 1, kExitUsage = 2, kExitNumerical = 3 };

int run_cli(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);
int run_cli(int argc, char **argv);

struct AblationRow {
    std::string name;
    RunConfig config;
};

// The eleven model variants compared in the ablation table, derived from a base config.
std::vector<AblationRow> ablation_rows(const RunConfig &base);

}  // namespace ctsynth

#endif
