#pragma once

#include "diffender/nn.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace diffender {

/// Self-describing checkpoint: magic, version, JSON header (kind, free-form
/// metadata, tensor table), then little-endian float64 payloads.
struct Checkpoint {
    std::string kind;
    nlohmann::json meta;
    std::map<std::string, nn::Param> tensors;

    const nn::Param& tensor(const std::string& name) const;
    /// Copies a stored tensor into `p`, checking the shape.
    void load_into(nn::Param& p) const;
};

void save_checkpoint(const std::filesystem::path& path, const std::string& kind, const nlohmann::json& meta,
                     const std::vector<const nn::Param*>& params);

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace diffender
