#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

namespace eva {

using Pair = std::pair<std::size_t, std::size_t>;  // (state index, object index)

enum class Split { train, val_seen, val_unseen, test_seen, test_unseen };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

enum class Phase { val, test };

// State/object inventories plus the five pair sets of a CZSL split. Pairs are
// stored by index into `states`/`objects`.
struct LabelSpace {
    std::vector<std::string> states;
    std::vector<std::string> objects;

    std::vector<Pair> train_pairs;        // C^s
    std::vector<Pair> val_seen_pairs;     // subset of C^s
    std::vector<Pair> val_unseen_pairs;   // C^u at validation
    std::vector<Pair> test_seen_pairs;    // subset of C^s
    std::vector<Pair> test_unseen_pairs;  // C^u at test

    std::size_t pair_key(const Pair& p) const { return p.first * objects.size() + p.second; }
    bool is_seen(const Pair& p) const;

    std::size_t state_index(const std::string& name) const;
    std::size_t object_index(const std::string& name) const;

    std::unordered_map<std::string, std::size_t> state_idx;
    std::unordered_map<std::string, std::size_t> object_idx;

    void rebuild_index();
};

// One evaluation/training label space: an ordered composition list with
// seen flags and per-composition primitive ids.
struct TargetSpace {
    std::vector<Pair> comps;
    std::vector<bool> seen;
    std::vector<std::size_t> state_of;   // group id per composition
    std::vector<std::size_t> object_of;
    std::size_t n_states = 0;
    std::size_t n_objects = 0;
    std::unordered_map<std::size_t, std::size_t> index;  // pair key -> position

    std::size_t position(const LabelSpace& space, const Pair& p) const;
    bool contains(const LabelSpace& space, const Pair& p) const;
};

TargetSpace make_target(const LabelSpace& space, const std::vector<Pair>& comps);

TargetSpace train_target(const LabelSpace& space);                 // C^s
TargetSpace closed_target(const LabelSpace& space, Phase phase);   // C^s U C^u
TargetSpace open_target(const LabelSpace& space);                  // S x O

}  // namespace eva
