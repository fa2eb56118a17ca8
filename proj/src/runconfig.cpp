#include "eva/runconfig.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

#include "eva/rng.hpp"
#include "json.hpp"

namespace eva {

using nlohmann::json;

void RunConfig::apply_master_seed(std::uint64_t s) {
    seed = s;
    data.seed = s;
    model.seed = mix_seed(s, 1);
    trainer.seed = mix_seed(s, 2);
}

namespace {

const char* t2i_name(T2IMode m) { return m == T2IMode::renormalized ? "renormalized" : "literal"; }

T2IMode t2i_from_name(const std::string& s) {
    if (s == "renormalized") return T2IMode::renormalized;
    if (s == "literal") return T2IMode::literal;
    throw std::invalid_argument("unknown t2i mode '" + s + "'");
}

const char* world_name(WorldMode m) { return m == WorldMode::closed ? "closed" : "open"; }

WorldMode world_from_name(const std::string& s) {
    if (s == "closed") return WorldMode::closed;
    if (s == "open") return WorldMode::open;
    throw std::invalid_argument("unknown world mode '" + s + "'");
}

}  // namespace

std::string RunConfig::to_ini() const {
    std::ostringstream out;
    out << "seed = " << seed << "\n";
    out << "\n[data]\n";
    out << "states = " << data.n_states << "\n";
    out << "objects = " << data.n_objects << "\n";
    out << "train_pairs = " << data.train_pairs << "\n";
    out << "val_seen_pairs = " << data.val_seen_pairs << "\n";
    out << "val_unseen_pairs = " << data.val_unseen_pairs << "\n";
    out << "test_seen_pairs = " << data.test_seen_pairs << "\n";
    out << "test_unseen_pairs = " << data.test_unseen_pairs << "\n";
    out << "images_per_pair = " << data.images_per_pair << "\n";
    out << "seq_len = " << data.seq_len << "\n";
    out << "token_dim = " << data.token_dim << "\n";
    out << "noise = " << data.noise << "\n";
    out << "seed = " << data.seed << "\n";
    out << "\n[model]\n";
    out << "depth = " << model.enc.depth << "\n";
    out << "d = " << model.enc.d << "\n";
    out << "heads = " << model.enc.heads << "\n";
    out << "d_joint = " << model.enc.d_joint << "\n";
    out << "seq_len_image = " << model.enc.seq_len_image << "\n";
    out << "prefix_len = " << model.enc.prefix_len << "\n";
    out << "d_in = " << model.enc.d_in << "\n";
    out << "ffn_mult = " << model.enc.ffn_mult << "\n";
    out << "routed_experts = " << model.enc.moe.n_routed << "\n";
    out << "shared_experts = " << model.enc.moe.n_shared << "\n";
    out << "k = " << model.enc.moe.k << "\n";
    out << "rank = " << model.enc.moe.rank << "\n";
    out << "adapters = " << (model.enc.adapters_enabled ? 1 : 0) << "\n";
    out << "tau = " << model.tau << "\n";
    out << "seed = " << model.seed << "\n";
    out << "\n[train]\n";
    out << "lr = " << trainer.lr << "\n";
    out << "weight_decay = " << trainer.weight_decay << "\n";
    out << "epochs = " << trainer.epochs << "\n";
    out << "batch_size = " << trainer.batch_size << "\n";
    out << "lambda1 = " << trainer.align.lambda1 << "\n";
    out << "lambda2 = " << trainer.align.lambda2 << "\n";
    out << "alpha = " << trainer.align.alpha << "\n";
    out << "t2i_mode = " << t2i_name(trainer.align.t2i_mode) << "\n";
    out << "beta = " << trainer.beta << "\n";
    out << "seed = " << trainer.seed << "\n";
    out << "\n[eval]\n";
    out << "mode = " << world_name(eval.mode) << "\n";
    out << "beta = " << eval.beta << "\n";
    out << "feasibility_threshold = " << eval.feasibility_threshold << "\n";
    return out.str();
}

std::string RunConfig::to_json(std::size_t n_states, std::size_t n_objects) const {
    json j;
    j["seed"] = seed;
    j["n_states"] = n_states;
    j["n_objects"] = n_objects;
    j["data"] = {{"states", data.n_states},
                 {"objects", data.n_objects},
                 {"train_pairs", data.train_pairs},
                 {"val_seen_pairs", data.val_seen_pairs},
                 {"val_unseen_pairs", data.val_unseen_pairs},
                 {"test_seen_pairs", data.test_seen_pairs},
                 {"test_unseen_pairs", data.test_unseen_pairs},
                 {"images_per_pair", data.images_per_pair},
                 {"seq_len", data.seq_len},
                 {"token_dim", data.token_dim},
                 {"noise", data.noise},
                 {"seed", data.seed}};
    j["model"] = {{"depth", model.enc.depth},
                  {"d", model.enc.d},
                  {"heads", model.enc.heads},
                  {"d_joint", model.enc.d_joint},
                  {"seq_len_image", model.enc.seq_len_image},
                  {"prefix_len", model.enc.prefix_len},
                  {"d_in", model.enc.d_in},
                  {"ffn_mult", model.enc.ffn_mult},
                  {"routed_experts", model.enc.moe.n_routed},
                  {"shared_experts", model.enc.moe.n_shared},
                  {"k", model.enc.moe.k},
                  {"rank", model.enc.moe.rank},
                  {"adapters", model.enc.adapters_enabled},
                  {"tau", model.tau},
                  {"seed", model.seed}};
    j["train"] = {{"lr", trainer.lr},
                  {"weight_decay", trainer.weight_decay},
                  {"epochs", trainer.epochs},
                  {"batch_size", trainer.batch_size},
                  {"lambda1", trainer.align.lambda1},
                  {"lambda2", trainer.align.lambda2},
                  {"alpha", trainer.align.alpha},
                  {"t2i_mode", t2i_name(trainer.align.t2i_mode)},
                  {"beta", trainer.beta},
                  {"seed", trainer.seed}};
    j["eval"] = {{"mode", world_name(eval.mode)},
                 {"beta", eval.beta},
                 {"feasibility_threshold", eval.feasibility_threshold}};
    return j.dump();
}

RunConfig RunConfig::from_json(const std::string& json_text, std::size_t& n_states,
                               std::size_t& n_objects) {
    json j = json::parse(json_text);
    RunConfig cfg;
    cfg.seed = j.at("seed").get<std::uint64_t>();
    n_states = j.at("n_states").get<std::size_t>();
    n_objects = j.at("n_objects").get<std::size_t>();
    const json& d = j.at("data");
    cfg.data.n_states = d.at("states").get<std::size_t>();
    cfg.data.n_objects = d.at("objects").get<std::size_t>();
    cfg.data.train_pairs = d.at("train_pairs").get<std::size_t>();
    cfg.data.val_seen_pairs = d.at("val_seen_pairs").get<std::size_t>();
    cfg.data.val_unseen_pairs = d.at("val_unseen_pairs").get<std::size_t>();
    cfg.data.test_seen_pairs = d.at("test_seen_pairs").get<std::size_t>();
    cfg.data.test_unseen_pairs = d.at("test_unseen_pairs").get<std::size_t>();
    cfg.data.images_per_pair = d.at("images_per_pair").get<std::size_t>();
    cfg.data.seq_len = d.at("seq_len").get<std::size_t>();
    cfg.data.token_dim = d.at("token_dim").get<std::size_t>();
    cfg.data.noise = d.at("noise").get<double>();
    cfg.data.seed = d.at("seed").get<std::uint64_t>();
    const json& m = j.at("model");
    cfg.model.enc.depth = m.at("depth").get<std::size_t>();
    cfg.model.enc.d = m.at("d").get<std::size_t>();
    cfg.model.enc.heads = m.at("heads").get<std::size_t>();
    cfg.model.enc.d_joint = m.at("d_joint").get<std::size_t>();
    cfg.model.enc.seq_len_image = m.at("seq_len_image").get<std::size_t>();
    cfg.model.enc.prefix_len = m.at("prefix_len").get<std::size_t>();
    cfg.model.enc.d_in = m.at("d_in").get<std::size_t>();
    cfg.model.enc.ffn_mult = m.at("ffn_mult").get<std::size_t>();
    cfg.model.enc.moe.n_routed = m.at("routed_experts").get<std::size_t>();
    cfg.model.enc.moe.n_shared = m.at("shared_experts").get<std::size_t>();
    cfg.model.enc.moe.k = m.at("k").get<std::size_t>();
    cfg.model.enc.moe.rank = m.at("rank").get<std::size_t>();
    cfg.model.enc.adapters_enabled = m.at("adapters").get<bool>();
    cfg.model.tau = m.at("tau").get<double>();
    cfg.model.seed = m.at("seed").get<std::uint64_t>();
    const json& t = j.at("train");
    cfg.trainer.lr = t.at("lr").get<double>();
    cfg.trainer.weight_decay = t.at("weight_decay").get<double>();
    cfg.trainer.epochs = t.at("epochs").get<std::size_t>();
    cfg.trainer.batch_size = t.at("batch_size").get<std::size_t>();
    cfg.trainer.align.lambda1 = t.at("lambda1").get<double>();
    cfg.trainer.align.lambda2 = t.at("lambda2").get<double>();
    cfg.trainer.align.alpha = t.at("alpha").get<double>();
    cfg.trainer.align.t2i_mode = t2i_from_name(t.at("t2i_mode").get<std::string>());
    cfg.trainer.beta = t.at("beta").get<double>();
    cfg.trainer.seed = t.at("seed").get<std::uint64_t>();
    const json& e = j.at("eval");
    cfg.eval.mode = world_from_name(e.at("mode").get<std::string>());
    cfg.eval.beta = e.at("beta").get<double>();
    cfg.eval.feasibility_threshold = e.at("feasibility_threshold").get<double>();
    return cfg;
}

void load_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config file " + path);

    using Setter = std::function<void(const std::string&)>;
    auto set_size = [](std::size_t& slot) {
        return [&slot](const std::string& v) { slot = std::stoull(v); };
    };
    auto set_u64 = [](std::uint64_t& slot) {
        return [&slot](const std::string& v) { slot = std::stoull(v); };
    };
    auto set_double = [](double& slot) {
        return [&slot](const std::string& v) { slot = std::stod(v); };
    };

    std::map<std::string, Setter> setters;
    setters["seed"] = [&cfg](const std::string& v) { cfg.apply_master_seed(std::stoull(v)); };
    setters["data.states"] = set_size(cfg.data.n_states);
    setters["data.objects"] = set_size(cfg.data.n_objects);
    setters["data.train_pairs"] = set_size(cfg.data.train_pairs);
    setters["data.val_seen_pairs"] = set_size(cfg.data.val_seen_pairs);
    setters["data.val_unseen_pairs"] = set_size(cfg.data.val_unseen_pairs);
    setters["data.test_seen_pairs"] = set_size(cfg.data.test_seen_pairs);
    setters["data.test_unseen_pairs"] = set_size(cfg.data.test_unseen_pairs);
    setters["data.images_per_pair"] = set_size(cfg.data.images_per_pair);
    setters["data.seq_len"] = set_size(cfg.data.seq_len);
    setters["data.token_dim"] = set_size(cfg.data.token_dim);
    setters["data.noise"] = set_double(cfg.data.noise);
    setters["data.seed"] = set_u64(cfg.data.seed);
    setters["model.depth"] = set_size(cfg.model.enc.depth);
    setters["model.d"] = set_size(cfg.model.enc.d);
    setters["model.heads"] = set_size(cfg.model.enc.heads);
    setters["model.d_joint"] = set_size(cfg.model.enc.d_joint);
    setters["model.seq_len_image"] = set_size(cfg.model.enc.seq_len_image);
    setters["model.prefix_len"] = set_size(cfg.model.enc.prefix_len);
    setters["model.d_in"] = set_size(cfg.model.enc.d_in);
    setters["model.ffn_mult"] = set_size(cfg.model.enc.ffn_mult);
    setters["model.routed_experts"] = set_size(cfg.model.enc.moe.n_routed);
    setters["model.shared_experts"] = set_size(cfg.model.enc.moe.n_shared);
    setters["model.k"] = set_size(cfg.model.enc.moe.k);
    setters["model.rank"] = set_size(cfg.model.enc.moe.rank);
    setters["model.adapters"] = [&cfg](const std::string& v) {
        cfg.model.enc.adapters_enabled = v != "0" && v != "false";
    };
    setters["model.tau"] = set_double(cfg.model.tau);
    setters["model.seed"] = set_u64(cfg.model.seed);
    setters["train.lr"] = set_double(cfg.trainer.lr);
    setters["train.weight_decay"] = set_double(cfg.trainer.weight_decay);
    setters["train.epochs"] = set_size(cfg.trainer.epochs);
    setters["train.batch_size"] = set_size(cfg.trainer.batch_size);
    setters["train.lambda1"] = set_double(cfg.trainer.align.lambda1);
    setters["train.lambda2"] = set_double(cfg.trainer.align.lambda2);
    setters["train.alpha"] = set_double(cfg.trainer.align.alpha);
    setters["train.t2i_mode"] = [&cfg](const std::string& v) {
        cfg.trainer.align.t2i_mode = t2i_from_name(v);
    };
    setters["train.beta"] = set_double(cfg.trainer.beta);
    setters["train.seed"] = set_u64(cfg.trainer.seed);
    setters["eval.mode"] = [&cfg](const std::string& v) { cfg.eval.mode = world_from_name(v); };
    setters["eval.beta"] = set_double(cfg.eval.beta);
    setters["eval.feasibility_threshold"] = set_double(cfg.eval.feasibility_threshold);

    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto trim = [](std::string s) {
            auto b = s.find_first_not_of(" \t\r");
            auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[' && line.back() == ']') {
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument(path + ":" + std::to_string(line_no) +
                                        ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        std::string full = section.empty() ? key : section + "." + key;
        auto it = setters.find(full);
        if (it == setters.end())
            throw std::invalid_argument(path + ":" + std::to_string(line_no) +
                                        ": unknown config key '" + full + "'");
        try {
            it->second(value);
        } catch (const std::exception& e) {
            throw std::invalid_argument(path + ":" + std::to_string(line_no) + ": bad value for '" +
                                        full + "': " + e.what());
        }
    }
}

}  // namespace eva
