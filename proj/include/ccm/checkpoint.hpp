#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "ccm/nets.hpp"
#include "ccm/queue.hpp"

namespace ccm {

// Versioned binary checkpoint: backbone spec, seeds, every parameter array
// bit for bit, optionally the knowledge queue (front-door inference needs it)
// and a config echo string. Round-trips are exact.
struct Checkpoint {
    ModelBundle bundle;
    std::optional<KnowledgeQueue> queue;
    std::string config_echo;
};

void save_checkpoint(const std::filesystem::path& path, const ModelBundle& bundle,
                     const KnowledgeQueue* queue = nullptr, const std::string& config_echo = "");
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ccm
