#include "eva/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "eva/rng.hpp"
#include "json.hpp"

namespace eva {

namespace fs = std::filesystem;
using ag::Tensor;
using nlohmann::json;

void Dataset::rebuild_split_index() {
    for (auto& v : by_split) v.clear();
    for (std::size_t i = 0; i < samples.size(); ++i)
        by_split[static_cast<int>(samples[i].split)].push_back(i);
}

namespace {

constexpr Split kSplits[5] = {Split::train, Split::val_seen, Split::val_unseen, Split::test_seen,
                              Split::test_unseen};

Tensor make_sample_tokens(const SplitSpec& spec, const std::vector<double>& u_s,
                          const std::vector<double>& w_o, Rng& rng) {
    Tensor tokens = Tensor::zeros({spec.seq_len, spec.token_dim});
    std::normal_distribution<double> noise(0.0, 1.0);
    std::size_t n_content = spec.seq_len - 1;
    std::size_t n_obj = (n_content + 1) / 2;
    for (std::size_t r = 1; r < spec.seq_len; ++r) {
        bool object_patch = (r - 1) < n_obj;
        for (std::size_t c = 0; c < spec.token_dim; ++c) {
            double base = object_patch ? w_o[c] : u_s[c] * w_o[c];
            tokens.at(r, c) = base + spec.noise * noise(rng);
        }
    }
    return tokens;
}

}  // namespace

Dataset generate(const SplitSpec& spec) {
    if (spec.n_states == 0 || spec.n_objects == 0 || spec.seq_len < 2 || spec.token_dim == 0)
        throw std::invalid_argument("generate: degenerate split spec");
    std::size_t n_all = spec.n_states * spec.n_objects;
    if (spec.train_pairs + spec.val_unseen_pairs + spec.test_unseen_pairs > n_all)
        throw std::invalid_argument(
            "generate: seen plus unseen pair counts exceed the Cartesian product size");
    if (spec.val_seen_pairs > spec.train_pairs || spec.test_seen_pairs > spec.train_pairs)
        throw std::invalid_argument("generate: seen eval pairs exceed the training pair count");
    if (spec.train_pairs < std::max(spec.n_states, spec.n_objects))
        throw std::invalid_argument(
            "generate: too few training pairs to cover every state and object");

    Dataset ds;
    ds.seq_len = spec.seq_len;
    ds.token_dim = spec.token_dim;
    LabelSpace& space = ds.space;
    for (std::size_t s = 0; s < spec.n_states; ++s) space.states.push_back("s" + std::to_string(s));
    for (std::size_t o = 0; o < spec.n_objects; ++o)
        space.objects.push_back("o" + std::to_string(o));
    space.rebuild_index();

    // --- pair selection -------------------------------------------------
    Rng pair_rng(mix_seed(spec.seed, 101));
    std::set<std::size_t> used;
    auto key = [&](const Pair& p) { return space.pair_key(p); };

    std::vector<std::size_t> state_order(spec.n_states), object_order(spec.n_objects);
    std::iota(state_order.begin(), state_order.end(), 0);
    std::iota(object_order.begin(), object_order.end(), 0);
    std::shuffle(state_order.begin(), state_order.end(), pair_rng);
    std::shuffle(object_order.begin(), object_order.end(), pair_rng);

    std::vector<bool> object_covered(spec.n_objects, false);
    std::uniform_int_distribution<std::size_t> rand_object(0, spec.n_objects - 1);
    std::uniform_int_distribution<std::size_t> rand_state(0, spec.n_states - 1);

    for (std::size_t s : state_order) {
        Pair p{s, rand_object(pair_rng)};
        space.train_pairs.push_back(p);
        used.insert(key(p));
        object_covered[p.second] = true;
    }
    for (std::size_t o : object_order) {
        if (object_covered[o]) continue;
        Pair p{rand_state(pair_rng), o};
        while (used.count(key(p))) p.first = rand_state(pair_rng);
        space.train_pairs.push_back(p);
        used.insert(key(p));
        object_covered[o] = true;
    }
    if (space.train_pairs.size() > spec.train_pairs)
        throw std::invalid_argument(
            "generate: too few training pairs to cover every state and object");

    std::vector<Pair> all_pairs;
    for (std::size_t s = 0; s < spec.n_states; ++s)
        for (std::size_t o = 0; o < spec.n_objects; ++o) all_pairs.emplace_back(s, o);
    std::shuffle(all_pairs.begin(), all_pairs.end(), pair_rng);

    for (const Pair& p : all_pairs) {
        if (space.train_pairs.size() == spec.train_pairs) break;
        if (used.count(key(p))) continue;
        space.train_pairs.push_back(p);
        used.insert(key(p));
    }

    for (const Pair& p : all_pairs) {
        if (used.count(key(p))) continue;
        if (space.val_unseen_pairs.size() < spec.val_unseen_pairs) {
            space.val_unseen_pairs.push_back(p);
            used.insert(key(p));
        } else if (space.test_unseen_pairs.size() < spec.test_unseen_pairs) {
            space.test_unseen_pairs.push_back(p);
            used.insert(key(p));
        }
    }
    if (space.val_unseen_pairs.size() != spec.val_unseen_pairs ||
        space.test_unseen_pairs.size() != spec.test_unseen_pairs)
        throw std::invalid_argument("generate: not enough unseen pairs available");

    auto pick_seen_subset = [&](std::size_t n, std::uint64_t stream) {
        std::vector<Pair> pool = space.train_pairs;
        Rng r(mix_seed(spec.seed, stream));
        std::shuffle(pool.begin(), pool.end(), r);
        pool.resize(n);
        return pool;
    };
    space.val_seen_pairs = pick_seen_subset(spec.val_seen_pairs, 102);
    space.test_seen_pairs = pick_seen_subset(spec.test_seen_pairs, 103);

    // --- latents ----------------------------------------------------------
    std::vector<std::vector<double>> u(spec.n_states), w(spec.n_objects);
    {
        Rng lr(mix_seed(spec.seed, 201));
        std::normal_distribution<double> g(0.0, 1.0);
        for (auto& v : u) {
            v.resize(spec.token_dim);
            for (double& x : v) x = g(lr);
        }
        for (auto& v : w) {
            v.resize(spec.token_dim);
            for (double& x : v) x = g(lr);
        }
    }

    // --- samples; per (split, pair) streams so generation order is free ----
    auto emit = [&](Split split, const std::vector<Pair>& pairs) {
        for (const Pair& p : pairs) {
            Rng r(mix_seed(spec.seed,
                           1000 + static_cast<std::uint64_t>(split) * n_all + key(p)));
            for (std::size_t i = 0; i < spec.images_per_pair; ++i) {
                Sample sample;
                sample.tokens = make_sample_tokens(spec, u[p.first], w[p.second], r);
                sample.state = p.first;
                sample.object = p.second;
                sample.split = split;
                ds.samples.push_back(std::move(sample));
            }
        }
    };
    emit(Split::train, space.train_pairs);
    emit(Split::val_seen, space.val_seen_pairs);
    emit(Split::val_unseen, space.val_unseen_pairs);
    emit(Split::test_seen, space.test_seen_pairs);
    emit(Split::test_unseen, space.test_unseen_pairs);
    ds.rebuild_split_index();
    return ds;
}

// --- persistence ------------------------------------------------------------

namespace {

void write_u64(std::ofstream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::ifstream& in, const std::string& what) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw std::runtime_error("truncated payload header in " + what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& dir) {
    fs::create_directories(dir);
    std::ofstream manifest(fs::path(dir) / "manifest.jsonl");
    if (!manifest) throw std::runtime_error("cannot write manifest in " + dir);
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const Sample& s = ds.samples[i];
        json rec = {{"id", i},
                    {"state", ds.space.states.at(s.state)},
                    {"object", ds.space.objects.at(s.object)},
                    {"split", split_name(s.split)}};
        manifest << rec.dump() << "\n";
    }
    manifest.close();

    for (Split split : kSplits) {
        std::ofstream out(fs::path(dir) / ("tokens_" + std::string(split_name(split)) + ".bin"),
                          std::ios::binary);
        if (!out) throw std::runtime_error("cannot write token payload in " + dir);
        const auto& ids = ds.of(split);
        write_u64(out, ids.size());
        write_u64(out, ds.seq_len);
        write_u64(out, ds.token_dim);
        for (std::size_t id : ids) {
            const auto& data = ds.samples[id].tokens.data;
            out.write(reinterpret_cast<const char*>(data.data()),
                      static_cast<std::streamsize>(data.size() * sizeof(double)));
        }
    }
}

Dataset load_split(const std::string& manifest_path, bool require_tokens) {
    std::ifstream in(manifest_path);
    if (!in) throw std::runtime_error("cannot open manifest " + manifest_path);

    struct Record {
        std::size_t id;
        std::string state, object;
        Split split;
        std::size_t line;
    };
    std::vector<Record> records;
    std::set<std::size_t> ids;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw std::runtime_error("manifest line " + std::to_string(line_no) + ": " + e.what());
        }
        auto fail = [&](const std::string& msg) -> std::runtime_error {
            return std::runtime_error("manifest line " + std::to_string(line_no) + ": " + msg);
        };
        if (!rec.contains("id") || !rec.contains("state") || !rec.contains("object") ||
            !rec.contains("split"))
            throw fail("record needs id, state, object, split");
        Record r;
        try {
            r.id = rec.at("id").get<std::size_t>();
            r.state = rec.at("state").get<std::string>();
            r.object = rec.at("object").get<std::string>();
            r.split = split_from_name(rec.at("split").get<std::string>());
        } catch (const std::exception& e) {
            throw fail(e.what());
        }
        if (!ids.insert(r.id).second) throw fail("duplicate id " + std::to_string(r.id));
        r.line = line_no;
        records.push_back(std::move(r));
    }
    if (records.empty()) throw std::runtime_error("manifest " + manifest_path + " is empty");

    Dataset ds;
    LabelSpace& space = ds.space;
    auto intern = [](std::vector<std::string>& names,
                     std::unordered_map<std::string, std::size_t>& idx, const std::string& n) {
        auto it = idx.find(n);
        if (it != idx.end()) return it->second;
        idx[n] = names.size();
        names.push_back(n);
        return names.size() - 1;
    };

    std::set<std::size_t> train_keys, val_unseen_keys, test_unseen_keys;
    auto add_pair = [](std::vector<Pair>& pairs, std::set<std::size_t>& keys, std::size_t key,
                       const Pair& p) {
        if (keys.insert(key).second) pairs.push_back(p);
    };

    for (const Record& r : records) {
        Sample s;
        s.state = intern(space.states, space.state_idx, r.state);
        s.object = intern(space.objects, space.object_idx, r.object);
        s.split = r.split;
        ds.samples.push_back(std::move(s));
    }
    // pair keys depend on |O|, so collect pair sets after interning everything
    for (std::size_t i = 0; i < records.size(); ++i) {
        const Sample& s = ds.samples[i];
        Pair p{s.state, s.object};
        std::size_t k = space.pair_key(p);
        switch (s.split) {
            case Split::train: add_pair(space.train_pairs, train_keys, k, p); break;
            case Split::val_unseen: add_pair(space.val_unseen_pairs, val_unseen_keys, k, p); break;
            case Split::test_unseen:
                add_pair(space.test_unseen_pairs, test_unseen_keys, k, p);
                break;
            default: break;
        }
    }
    std::set<std::size_t> val_seen_keys, test_seen_keys;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const Record& r = records[i];
        const Sample& s = ds.samples[i];
        std::size_t k = space.pair_key({s.state, s.object});
        auto conflict = [&](const char* msg) -> std::runtime_error {
            return std::runtime_error("manifest line " + std::to_string(r.line) + ": " + msg +
                                      " (" + r.state + ", " + r.object + ")");
        };
        switch (s.split) {
            case Split::train:
                if (val_unseen_keys.count(k) || test_unseen_keys.count(k))
                    throw conflict("train composition also tagged unseen");
                break;
            case Split::val_unseen:
            case Split::test_unseen:
                if (train_keys.count(k)) throw conflict("unseen composition appears in train");
                break;
            case Split::val_seen:
                if (!train_keys.count(k)) throw conflict("val_seen composition missing from train");
                add_pair(space.val_seen_pairs, val_seen_keys, k, {s.state, s.object});
                break;
            case Split::test_seen:
                if (!train_keys.count(k))
                    throw conflict("test_seen composition missing from train");
                add_pair(space.test_seen_pairs, test_seen_keys, k, {s.state, s.object});
                break;
        }
    }

    // --- token payloads ----------------------------------------------------
    fs::path dir = fs::path(manifest_path).parent_path();
    ds.has_tokens = true;
    for (Split split : kSplits) {
        ds.by_split[static_cast<int>(split)].clear();
    }
    ds.rebuild_split_index();
    for (Split split : kSplits) {
        fs::path payload = dir / ("tokens_" + std::string(split_name(split)) + ".bin");
        const auto& split_ids = ds.of(split);
        if (!fs::exists(payload)) {
            if (require_tokens && !split_ids.empty())
                throw std::runtime_error("missing token payload " + payload.string());
            ds.has_tokens = false;
            continue;
        }
        std::ifstream pin(payload, std::ios::binary);
        std::uint64_t n = read_u64(pin, payload.string());
        std::uint64_t seq = read_u64(pin, payload.string());
        std::uint64_t dim = read_u64(pin, payload.string());
        if (n != split_ids.size())
            throw std::runtime_error(payload.string() + ": holds " + std::to_string(n) +
                                     " samples, manifest lists " +
                                     std::to_string(split_ids.size()));
        if (ds.seq_len == 0) {
            ds.seq_len = seq;
            ds.token_dim = dim;
        } else if (seq != ds.seq_len || dim != ds.token_dim) {
            throw std::runtime_error(payload.string() + ": token shape differs across splits");
        }
        for (std::size_t id : split_ids) {
            Tensor t = Tensor::zeros({seq, dim});
            pin.read(reinterpret_cast<char*>(t.data.data()),
                     static_cast<std::streamsize>(t.data.size() * sizeof(double)));
            if (!pin) throw std::runtime_error("truncated token payload " + payload.string());
            ds.samples[id].tokens = std::move(t);
        }
    }
    return ds;
}

std::string SplitReport::to_string() const {
    std::ostringstream out;
    out << "seen pairs: " << n_seen_pairs << ", val unseen: " << n_val_unseen_pairs
        << ", test unseen: " << n_test_unseen_pairs << ", open world size: " << open_world_size
        << "\n";
    if (violations.empty()) {
        out << "split invariants hold\n";
    } else {
        for (const auto& v : violations) out << "violation: " << v << "\n";
    }
    return out.str();
}

SplitReport verify_split(const Dataset& ds) {
    SplitReport report;
    const LabelSpace& space = ds.space;
    report.n_seen_pairs = space.train_pairs.size();
    report.n_val_unseen_pairs = space.val_unseen_pairs.size();
    report.n_test_unseen_pairs = space.test_unseen_pairs.size();
    report.open_world_size = space.states.size() * space.objects.size();

    auto name = [&](const Pair& p) {
        return "(" + space.states.at(p.first) + ", " + space.objects.at(p.second) + ")";
    };
    for (const auto& unseen : {space.val_unseen_pairs, space.test_unseen_pairs})
        for (const Pair& p : unseen)
            if (space.is_seen(p)) report.violations.push_back("seen/unseen overlap " + name(p));
    for (const auto& seen_eval : {space.val_seen_pairs, space.test_seen_pairs})
        for (const Pair& p : seen_eval)
            if (!space.is_seen(p))
                report.violations.push_back("eval pair tagged seen but not in C^s " + name(p));

    std::vector<bool> state_cov(space.states.size(), false), obj_cov(space.objects.size(), false);
    for (const Pair& p : space.train_pairs) {
        state_cov[p.first] = true;
        obj_cov[p.second] = true;
    }
    for (std::size_t s = 0; s < state_cov.size(); ++s)
        if (!state_cov[s])
            report.violations.push_back("state " + space.states[s] + " never trained");
    for (std::size_t o = 0; o < obj_cov.size(); ++o)
        if (!obj_cov[o])
            report.violations.push_back("object " + space.objects[o] + " never trained");
    return report;
}

}  // namespace eva
