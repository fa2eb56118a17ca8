#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eva/labelspace.hpp"
#include "eva/tensor.hpp"

namespace eva {

struct SplitSpec {
    std::size_t n_states = 8;
    std::size_t n_objects = 10;
    std::size_t train_pairs = 40;
    std::size_t val_seen_pairs = 20;
    std::size_t val_unseen_pairs = 20;
    std::size_t test_seen_pairs = 20;
    std::size_t test_unseen_pairs = 20;
    std::size_t images_per_pair = 20;
    std::size_t seq_len = 17;     // row 0 is the CLS slot, left zero
    std::size_t token_dim = 16;
    double noise = 0.3;
    std::uint64_t seed = 7;
};

struct Sample {
    ag::Tensor tokens;  // seq_len x token_dim
    std::size_t state = 0;
    std::size_t object = 0;
    Split split = Split::train;
};

struct Dataset {
    LabelSpace space;
    std::vector<Sample> samples;  // manifest order
    std::size_t seq_len = 0;
    std::size_t token_dim = 0;
    bool has_tokens = true;

    const std::vector<std::size_t>& of(Split s) const { return by_split[static_cast<int>(s)]; }
    void rebuild_split_index();

    std::vector<std::size_t> by_split[5];
};

// Deterministic synthetic CZSL data. Object patches carry the object latent;
// interaction patches carry the elementwise state-object product, so state
// appearance is object-conditional.
Dataset generate(const SplitSpec& spec);

// Writes manifest.jsonl plus one tokens_<split>.bin per split into `dir`.
void save_dataset(const Dataset& ds, const std::string& dir);

// Reads a JSON-lines manifest ({id, state, object, split} per line) and the
// sibling token payloads. Validation failures carry the offending line
// number. With require_tokens=false a manifest-only load is allowed.
Dataset load_split(const std::string& manifest_path, bool require_tokens = true);

struct SplitReport {
    std::vector<std::string> violations;
    std::size_t n_seen_pairs = 0;
    std::size_t n_val_unseen_pairs = 0;
    std::size_t n_test_unseen_pairs = 0;
    std::size_t open_world_size = 0;
    bool clean() const { return violations.empty(); }
    std::string to_string() const;
};

SplitReport verify_split(const Dataset& ds);

}  // namespace eva
