#include "dualprior/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "dualprior/error.hpp"

namespace dualprior {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {
constexpr char kModelMagic[8] = {'D', 'P', 'C', 'K', 'P', 'T', '0', '1'};
constexpr char kOptMagic[8] = {'D', 'P', 'O', 'P', 'T', 'M', '0', '1'};

void write_block(std::ofstream& f, const char (&magic)[8], const json& header, const std::vector<double>& payload) {
    const std::string h = header.dump();
    const std::uint64_t len = h.size();
    f.write(magic, 8);
    f.write(reinterpret_cast<const char*>(&len), sizeof len);
    f.write(h.data(), static_cast<std::streamsize>(h.size()));
    f.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size() * sizeof(double)));
}

// Returns false at a clean end of file before the magic.
bool read_header(std::ifstream& f, const char (&magic)[8], json& header, const fs::path& path) {
    char got[8];
    f.read(got, 8);
    if (f.gcount() == 0 && f.eof()) return false;
    if (f.gcount() != 8 || std::memcmp(got, magic, 8) != 0) throw DataError("bad checkpoint block magic in " + path.string());
    std::uint64_t len = 0;
    f.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!f || len > (std::uint64_t{1} << 30)) throw DataError("corrupt checkpoint header in " + path.string());
    std::string h(len, '\0');
    f.read(h.data(), static_cast<std::streamsize>(len));
    if (!f) throw DataError("truncated checkpoint header in " + path.string());
    try {
        header = json::parse(h);
    } catch (const json::exception& e) {
        throw DataError("corrupt checkpoint header in " + path.string() + ": " + e.what());
    }
    return true;
}

void read_payload(std::ifstream& f, std::vector<double>& payload, std::size_t n, const fs::path& path) {
    payload.resize(n);
    f.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (static_cast<std::size_t>(f.gcount()) != n * sizeof(double)) throw DataError("truncated checkpoint " + path.string());
}

}  // namespace

void save_checkpoint(const fs::path& path, const SiameseModel& model, const NoiseSchedule& schedule,
                     const OptimizerState* optimizer, const json& extra) {
    json manifest = json::array();
    std::vector<double> payload;
    for (const auto& p : model.parameters()) {
        manifest.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"offset", payload.size()}, {"frozen", p.frozen}});
        payload.insert(payload.end(), p.value.data().begin(), p.value.data().end());
    }
    const json header{{"config", model_config_to_json(model.config())},
                      {"schedule", schedule_to_json(schedule)},
                      {"extra", extra},
                      {"parameters", manifest}};

    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot write " + tmp.string());
        write_block(f, kModelMagic, header, payload);
        if (optimizer) {
            const auto& params = model.parameters();
            if (optimizer->m.size() != params.size()) throw ConfigError("optimizer state does not match the model");
            json moments = json::array();
            std::vector<double> data;
            for (std::size_t i = 0; i < params.size(); ++i) {
                for (const auto* which : {"m", "v"}) {
                    const auto& vec = which[0] == 'm' ? optimizer->m[i] : optimizer->v[i];
                    moments.push_back({{"name", params[i].name}, {"which", which}, {"size", vec.size()}, {"offset", data.size()}});
                    data.insert(data.end(), vec.begin(), vec.end());
                }
            }
            const json oh{{"step", optimizer->step}, {"lr", optimizer->lr}, {"weight_decay", optimizer->weight_decay},
                          {"beta1", optimizer->beta1}, {"beta2", optimizer->beta2}, {"eps", optimizer->eps},
                          {"moments", moments}};
            write_block(f, kOptMagic, oh, data);
        }
        f.flush();
        if (!f) throw IoError("failed writing " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint " + path.string());
    json header;
    std::vector<double> payload;
    if (!read_header(f, kModelMagic, header, path)) throw DataError("empty checkpoint " + path.string());

    Checkpoint ck;
    try {
        const auto cfg = model_config_from_json(header.at("config"));
        ck.schedule = schedule_from_json(header.at("schedule"));
        ck.extra = header.value("extra", json::object());
        ck.model = std::make_unique<SiameseModel>(cfg, 0);
        const auto& manifest = header.at("parameters");
        auto& params = ck.model->parameters();
        if (manifest.size() != params.size()) throw DataError("checkpoint parameter count does not match its config");
        std::size_t total = 0;
        for (const auto& e : manifest) total += shape_numel(e.at("shape").get<Shape>());
        read_payload(f, payload, total, path);
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto& e = manifest[i];
            auto& p = params[i];
            if (e.at("name").get<std::string>() != p.name || e.at("shape").get<Shape>() != p.value.shape() ||
                e.at("frozen").get<bool>() != p.frozen)
                throw DataError("checkpoint manifest mismatch at " + p.name);
            const std::size_t off = e.at("offset");
            if (off + p.value.numel() > payload.size()) throw DataError("checkpoint offset out of range at " + p.name);
            std::copy_n(payload.begin() + static_cast<std::ptrdiff_t>(off), p.value.numel(), p.value.mutable_data().begin());
        }

        json oh;
        std::vector<double> od;
        if (read_header(f, kOptMagic, oh, path)) {
            OptimizerState opt;
            opt.step = oh.at("step");
            opt.lr = oh.at("lr");
            opt.weight_decay = oh.at("weight_decay");
            opt.beta1 = oh.at("beta1");
            opt.beta2 = oh.at("beta2");
            opt.eps = oh.at("eps");
            const auto& moments = oh.at("moments");
            if (moments.size() != 2 * params.size()) throw DataError("optimizer manifest does not match the model");
            std::size_t n = 0;
            for (const auto& e : moments) n += e.at("size").get<std::size_t>();
            read_payload(f, od, n, path);
            opt.m.resize(params.size());
            opt.v.resize(params.size());
            for (std::size_t i = 0; i < moments.size(); ++i) {
                const auto& e = moments[i];
                const auto& p = params[i / 2];
                if (e.at("name").get<std::string>() != p.name) throw DataError("optimizer manifest mismatch at " + p.name);
                const std::size_t size = e.at("size"), off = e.at("offset");
                if (size != (p.frozen ? 0 : p.value.numel()) || off + size > od.size())
                    throw DataError("optimizer moment size mismatch at " + p.name);
                auto& dst = e.at("which").get<std::string>() == "m" ? opt.m[i / 2] : opt.v[i / 2];
                dst.assign(od.begin() + static_cast<std::ptrdiff_t>(off), od.begin() + static_cast<std::ptrdiff_t>(off + size));
            }
            ck.optimizer = std::move(opt);
        }
    } catch (const json::exception& e) {
        throw DataError("corrupt checkpoint " + path.string() + ": " + e.what());
    }
    return ck;
}

}  // namespace dualprior
