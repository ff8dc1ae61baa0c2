#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace dualprior {

inline constexpr const char* kCodeVersion = "dualprior 0.1.0";

/// FNV-1a 64 over bytes, rendered as 16 hex digits.
std::string fnv1a_hex(std::string_view bytes);
/// Hash of the canonical serialization (object keys sorted, compact).
std::string config_hash(const nlohmann::json& config);
std::string hash_file(const std::filesystem::path& path);
/// Relative path -> content hash for every regular file under dir, skipping
/// the names in `exclude`.
std::map<std::string, std::string> hash_tree(const std::filesystem::path& dir,
                                             const std::vector<std::string>& exclude = {"run.json"});

struct RunManifest {
    std::string command;
    std::vector<std::string> args;  // command line after the program name
    std::string config_text;        // contents of --config, if one was given
    nlohmann::json config;          // effective values of every option
    std::string config_hash;
    std::uint64_t seed = 0;
    std::string code_version = kCodeVersion;
    std::vector<std::string> inputs;
    std::map<std::string, std::string> input_hashes;  // input path -> hash of its content tree
    std::string output;
    std::map<std::string, std::string> output_hashes;
    double duration_seconds = 0.0;
};

nlohmann::json manifest_to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);
/// Written to a temporary sibling and renamed into place.
void write_manifest(const std::filesystem::path& path, const RunManifest& m);
RunManifest read_manifest(const std::filesystem::path& path);

/// Writes text to a temporary sibling and renames it into place.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace dualprior
