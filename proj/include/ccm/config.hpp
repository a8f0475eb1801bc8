#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "ccm/data.hpp"
#include "ccm/losses.hpp"

namespace ccm {

enum class PredictionMode { classifier, frontdoor };

std::string to_string(PredictionMode mode);
PredictionMode prediction_mode_from_string(const std::string& name);

// Full run configuration. Config files carry exactly these keys; an unknown
// key is a hard error (a silent typo in tau or alpha is the failure mode this
// guards against).
struct TrainConfig {
    double tau = 0.07;
    double alpha = 0.999;
    double learning_rate = 0.05;
    int epochs = 10;
    int batch_size_per_domain = 32;
    int queue_multiple = 4;
    LossFlags loss_flags;
    PredictionMode prediction_mode = PredictionMode::frontdoor;
    double val_fraction = 0.2;
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

TrainConfig parse_train_config(const nlohmann::json& j);
DatasetSpec parse_dataset_spec(const nlohmann::json& j);

TrainConfig load_train_config(const std::filesystem::path& path);
DatasetSpec load_dataset_spec(const std::filesystem::path& path);

nlohmann::json to_json(const TrainConfig& config);
nlohmann::json to_json(const DatasetSpec& spec);
nlohmann::json to_json(const LossFlags& flags);

std::string loss_flags_to_string(const LossFlags& flags);       // e.g. "teach+learn+cs"
LossFlags loss_flags_from_string(const std::string& flags);     // comma or plus separated

}  // namespace ccm
