#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

namespace affes::cli {

/// Settings that come from flags rather than the config file.
struct Invocation {
  std::optional<std::filesystem::path> config_file;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out_dir;
  int jobs = 1;
};

/// Reads the config file (if any), applies flag overrides for `command` and
/// resolves it against the defaults.
nlohmann::json resolve_invocation(const Invocation& inv, std::string_view command);

/// Each command writes `config.resolved` plus its artifacts into the output
/// directory and a short summary to `out`.
void cmd_train(const nlohmann::json& resolved, int jobs, std::ostream& out);
void cmd_eval(const nlohmann::json& resolved, const std::vector<std::filesystem::path>& checkpoints,
              int jobs, std::ostream& out);
void cmd_attack(const nlohmann::json& resolved, const std::filesystem::path& checkpoint,
                std::size_t index, std::ostream& out);
void cmd_landscape(const nlohmann::json& resolved, const std::filesystem::path& checkpoint,
                   std::size_t index, std::ostream& out);
void cmd_sigma0(double epsilon, int d, std::ostream& out);

/// Full command-line entry point. Returns 0 on success, 1 for usage and
/// config errors, 2 for data and I/O errors, 3 for numerical failures.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace affes::cli
