#pragma once

#include <cstdint>
#include <string>

#include "eva/dataset.hpp"
#include "eva/evaluator.hpp"
#include "eva/model.hpp"
#include "eva/trainer.hpp"

namespace eva {

// Every run-affecting knob in one place. Values resolve in order: built-in
// defaults, then the [section] key = value config file, then command-line
// flags. The resolved result is echoed into the run directory.
struct RunConfig {
    std::uint64_t seed = 7;  // master seed; derives the per-component streams
    std::string out_dir;

    SplitSpec data;
    ModelConfig model;
    TrainConfig trainer;
    EvalConfig eval;

    // master seed fan-out (data keeps the master for easy reproduction)
    void apply_master_seed(std::uint64_t s);

    std::string to_ini() const;
    std::string to_json(std::size_t n_states, std::size_t n_objects) const;

    // parses the checkpoint config snapshot; returns the label space sizes
    static RunConfig from_json(const std::string& json_text, std::size_t& n_states,
                               std::size_t& n_objects);
};

// INI-style parser: [section] headers, key = value lines, # comments.
// Unknown keys fail loudly.
void load_config_file(RunConfig& cfg, const std::string& path);

}  // namespace eva
