#pragma once

#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dualprior/manifest.hpp"

namespace dualprior::cli {

namespace fs = std::filesystem;

/// Everything a command needs to finish with a run manifest.
struct Run {
    std::string command;
    std::vector<std::string> args;
    std::string config_file;  // value of --config, empty if none
    fs::path out;
    bool force = false;
    std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();
};

/// Creates `out` fresh. An existing non-empty directory is only replaced with --force.
void prepare_output(const fs::path& out, bool force);

/// Hash of a file or of every file under a directory.
std::string content_hash(const fs::path& path);

/// Writes out/run.json. `config` is the effective configuration after flags,
/// config file and defaults have been merged.
void finish_run(const Run& run, const nlohmann::json& config, std::uint64_t seed, const std::vector<std::string>& inputs);

/// Adds --config, --out and --force to a subcommand and wires them to `run`.
void add_common(CLI::App* sub, Run& run, bool out_required = true);

/// Parses and runs one command line (without the program name). Returns the
/// process exit code.
int run_cli(const std::vector<std::string>& args);

int threads_from_env();

}  // namespace dualprior::cli
