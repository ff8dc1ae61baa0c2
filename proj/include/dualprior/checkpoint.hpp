#pragma once

#include <filesystem>
#include <memory>
#include <optional>

#include <json.hpp>

#include "dualprior/model.hpp"
#include "dualprior/schedule.hpp"
#include "dualprior/trainer.hpp"

namespace dualprior {

/// Binary layout (little-endian):
///   "DPCKPT01" | u64 header_len | JSON header | f64 parameters...
///   [ "DPOPTM01" | u64 header_len | JSON header | f64 moments... ]
/// The model header is {config, schedule, extra, parameters: [{name, shape,
/// offset, frozen}]}; offsets count doubles from the start of the block.
/// The optimizer header is {step, lr, weight_decay, beta1, beta2, eps,
/// moments: [{name, which, shape, offset}]}.
struct Checkpoint {
    std::unique_ptr<SiameseModel> model;
    NoiseSchedule schedule;
    std::optional<OptimizerState> optimizer;
    nlohmann::json extra;
};

/// Written to a temporary file and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const SiameseModel& model, const NoiseSchedule& schedule,
                     const OptimizerState* optimizer, const nlohmann::json& extra = nlohmann::json::object());
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dualprior
