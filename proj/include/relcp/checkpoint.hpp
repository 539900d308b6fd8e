#pragma once

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "relcp/autodiff.hpp"
#include "relcp/tensor.hpp"

namespace relcp {

// Binary container for a parameter set plus a free-form JSON manifest.
// Layout: magic, format version, manifest, named float64 tensors, checksum.
struct Checkpoint {
    nlohmann::json manifest;
    std::vector<std::pair<std::string, Tensor>> entries;

    const Tensor* find(const std::string& name) const;
    const Tensor& at(const std::string& name) const;
};

inline constexpr uint32_t kCheckpointFormatVersion = 1;

uint64_t fnv1a(const void* data, size_t len, uint64_t seed = 14695981039346656037ULL);
uint64_t fnv1a(const std::string& s);

// Writes to <path>.tmp then renames, so readers never see a partial file.
void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Snapshot every parameter (trainable or not) in creation order.
Checkpoint checkpoint_from_store(const ParamStore& store, nlohmann::json manifest);

// Replace matching parameters in the store; names present in the store but
// absent from the checkpoint (or vice versa) raise VersionMismatch.
void load_into_store(const Checkpoint& ck, ParamStore& store);

}  // namespace relcp
