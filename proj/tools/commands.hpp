#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "kemvol/volume.hpp"

namespace kemvol::cli {

/// Parses argv (a JSON config named by --config supplies defaults that the
/// command line overrides) and runs the subcommand. Returns the exit code.
/// Results go to `out`, iteration logs and errors to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Parameter fields as <prefix>pi_<m>, <prefix>mu_<m>, <prefix>sigma_<m>
/// volumes (m 1-based) in `dir`.
void store_parameters(const ParameterField& theta, const std::filesystem::path& dir,
                      const std::string& prefix = "");
ParameterField load_parameters(const std::filesystem::path& dir, int M,
                               const std::string& prefix = "");

}  // namespace kemvol::cli
