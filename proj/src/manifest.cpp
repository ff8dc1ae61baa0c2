#include "dualprior/manifest.hpp"

#include <cstdio>
#include <algorithm>
#include <fstream>
#include <iterator>

#include "dualprior/error.hpp"

namespace dualprior {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fnv1a_hex(std::string_view bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string config_hash(const json& config) { return fnv1a_hex(config.dump()); }

std::string hash_file(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read " + path.string());
    const std::string bytes{std::istreambuf_iterator<char>(f), {}};
    return fnv1a_hex(bytes);
}

std::map<std::string, std::string> hash_tree(const fs::path& dir, const std::vector<std::string>& exclude) {
    std::map<std::string, std::string> out;
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), dir).generic_string();
        if (std::find(exclude.begin(), exclude.end(), rel) != exclude.end()) continue;
        out[rel] = hash_file(e.path());
    }
    return out;
}

json manifest_to_json(const RunManifest& m) {
    return {{"command", m.command},
            {"args", m.args},
            {"config_text", m.config_text},
            {"config", m.config},
            {"config_hash", m.config_hash},
            {"seed", m.seed},
            {"code_version", m.code_version},
            {"inputs", m.inputs},
            {"input_hashes", m.input_hashes},
            {"output", m.output},
            {"output_hashes", m.output_hashes},
            {"duration_seconds", m.duration_seconds}};
}

RunManifest manifest_from_json(const json& j) {
    RunManifest m;
    try {
        m.command = j.at("command");
        m.args = j.at("args").get<std::vector<std::string>>();
        m.config_text = j.at("config_text");
        m.config = j.at("config");
        m.config_hash = j.at("config_hash");
        m.seed = j.at("seed");
        m.code_version = j.at("code_version");
        m.inputs = j.at("inputs").get<std::vector<std::string>>();
        m.input_hashes = j.at("input_hashes").get<std::map<std::string, std::string>>();
        m.output = j.at("output");
        m.output_hashes = j.at("output_hashes").get<std::map<std::string, std::string>>();
        m.duration_seconds = j.at("duration_seconds");
    } catch (const json::exception& e) {
        throw DataError(std::string("run manifest: ") + e.what());
    }
    return m;
}

void write_text_atomic(const fs::path& path, const std::string& text) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot write " + tmp.string());
        f << text;
        f.flush();
        if (!f) throw IoError("failed writing " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move " + tmp.string() + " into place: " + ec.message());
}

void write_manifest(const fs::path& path, const RunManifest& m) { write_text_atomic(path, manifest_to_json(m).dump(2) + "\n"); }

RunManifest read_manifest(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open manifest " + path.string());
    try {
        return manifest_from_json(json::parse(f));
    } catch (const json::parse_error& e) {
        throw DataError("corrupt manifest " + path.string() + ": " + e.what());
    }
}

}  // namespace dualprior
