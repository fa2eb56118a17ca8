#include "eva/labelspace.hpp"

#include <algorithm>
#include <stdexcept>

namespace eva {

const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val_seen: return "val_seen";
        case Split::val_unseen: return "val_unseen";
        case Split::test_seen: return "test_seen";
        case Split::test_unseen: return "test_unseen";
    }
    return "?";
}

Split split_from_name(const std::string& name) {
    for (Split s : {Split::train, Split::val_seen, Split::val_unseen, Split::test_seen,
                    Split::test_unseen})
        if (name == split_name(s)) return s;
    throw std::invalid_argument("unknown split tag '" + name + "'");
}

bool LabelSpace::is_seen(const Pair& p) const {
    return std::find(train_pairs.begin(), train_pairs.end(), p) != train_pairs.end();
}

std::size_t LabelSpace::state_index(const std::string& name) const {
    auto it = state_idx.find(name);
    if (it == state_idx.end()) throw std::invalid_argument("unknown state '" + name + "'");
    return it->second;
}

std::size_t LabelSpace::object_index(const std::string& name) const {
    auto it = object_idx.find(name);
    if (it == object_idx.end()) throw std::invalid_argument("unknown object '" + name + "'");
    return it->second;
}

void LabelSpace::rebuild_index() {
    state_idx.clear();
    object_idx.clear();
    for (std::size_t i = 0; i < states.size(); ++i) state_idx[states[i]] = i;
    for (std::size_t i = 0; i < objects.size(); ++i) object_idx[objects[i]] = i;
}

std::size_t TargetSpace::position(const LabelSpace& space, const Pair& p) const {
    auto it = index.find(space.pair_key(p));
    if (it == index.end())
        throw std::invalid_argument("composition (" + space.states.at(p.first) + ", " +
                                    space.objects.at(p.second) + ") not in target space");
    return it->second;
}

bool TargetSpace::contains(const LabelSpace& space, const Pair& p) const {
    return index.count(space.pair_key(p)) != 0;
}

TargetSpace make_target(const LabelSpace& space, const std::vector<Pair>& comps) {
    if (comps.empty()) throw std::invalid_argument("target composition space is empty");
    TargetSpace t;
    t.comps = comps;
    t.n_states = space.states.size();
    t.n_objects = space.objects.size();
    t.seen.reserve(comps.size());
    for (std::size_t i = 0; i < comps.size(); ++i) {
        const Pair& p = comps[i];
        if (p.first >= t.n_states || p.second >= t.n_objects)
            throw std::invalid_argument("composition index out of range");
        if (!t.index.emplace(space.pair_key(p), i).second)
            throw std::invalid_argument("duplicate composition in target space");
        t.seen.push_back(space.is_seen(p));
        t.state_of.push_back(p.first);
        t.object_of.push_back(p.second);
    }
    return t;
}

TargetSpace train_target(const LabelSpace& space) { return make_target(space, space.train_pairs); }

TargetSpace closed_target(const LabelSpace& space, Phase phase) {
    std::vector<Pair> comps = space.train_pairs;
    const auto& unseen = phase == Phase::val ? space.val_unseen_pairs : space.test_unseen_pairs;
    comps.insert(comps.end(), unseen.begin(), unseen.end());
    return make_target(space, comps);
}

TargetSpace open_target(const LabelSpace& space) {
    std::vector<Pair> comps;
    comps.reserve(space.states.size() * space.objects.size());
    for (std::size_t s = 0; s < space.states.size(); ++s)
        for (std::size_t o = 0; o < space.objects.size(); ++o) comps.emplace_back(s, o);
    return make_target(space, comps);
}

}  // namespace eva
