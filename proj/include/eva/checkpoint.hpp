#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eva/params.hpp"
#include "eva/tensor.hpp"

namespace eva {

// Little-endian container: "EVA1" magic, version, seed/epoch, a JSON config
// snapshot, a manifest of (name, shape, trainable), then raw 64-bit payloads
// in manifest order. Round trips are bit-exact.
struct Checkpoint {
    std::string config_json;
    std::uint64_t seed = 0;
    std::uint64_t epoch = 0;

    struct Entry {
        std::string name;
        ag::Shape shape;
        bool trainable = false;
        std::vector<double> data;
    };
    std::vector<Entry> entries;

    const Entry* find(const std::string& name) const;
};

Checkpoint snapshot(const ag::ParameterStore& store, std::string config_json, std::uint64_t seed,
                    std::uint64_t epoch);

// Copies checkpoint values into the store; every parameter must match by
// name and shape in both directions.
void restore(const Checkpoint& ckpt, ag::ParameterStore& store);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace eva
