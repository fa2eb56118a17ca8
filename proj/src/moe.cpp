#include "eva/moe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace eva {

using ag::Tape;
using ag::Tensor;
using ag::Value;

void LoadStats::merge(const LoadStats& other) {
    if (other.counts_.size() != counts_.size())
        throw std::invalid_argument("LoadStats::merge: expert count mismatch");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    total_ += other.total_;
}

std::vector<double> LoadStats::shares() const {
    if (total_ == 0) throw std::runtime_error("LoadStats: no routed assignments recorded");
    std::vector<double> out(counts_.size());
    for (std::size_t i = 0; i < counts_.size(); ++i)
        out[i] = static_cast<double>(counts_[i]) / static_cast<double>(total_);
    return out;
}

MoEAdapter::MoEAdapter(ag::ParameterStore& store, const std::string& prefix, std::size_t d,
                       const MoEConfig& cfg, Rng& rng)
    : store_(&store), cfg_(cfg), d_(d) {
    if (cfg.rank >= d)
        throw std::invalid_argument("MoEAdapter: rank " + std::to_string(cfg.rank) +
                                    " must be below width " + std::to_string(d));
    if (cfg.k > cfg.n_routed)
        throw std::invalid_argument("MoEAdapter: k " + std::to_string(cfg.k) +
                                    " exceeds routed expert count " + std::to_string(cfg.n_routed));
    if (cfg.n_routed > 0) {
        Tensor r = Tensor::zeros({d, cfg.n_routed});
        fill_normal(r, rng, 0.02);
        router_ = store.add(prefix + ".router", std::move(r), true);
    }
    double bound = 1.0 / std::sqrt(static_cast<double>(d));
    auto make_expert = [&](const std::string& name) {
        Tensor a = Tensor::zeros({cfg.rank, d});
        fill_uniform(a, rng, -bound, bound);
        Expert e;
        e.a = store.add(name + ".A", std::move(a), true);
        e.b = store.add(name + ".B", Tensor::zeros({d, cfg.rank}), true);
        return e;
    };
    for (std::size_t j = 0; j < cfg.n_shared; ++j)
        shared_.push_back(make_expert(prefix + ".shared" + std::to_string(j)));
    for (std::size_t i = 0; i < cfg.n_routed; ++i)
        routed_.push_back(make_expert(prefix + ".routed" + std::to_string(i)));
}

Value MoEAdapter::lora_apply(Tape& tape, Value h, const Expert& e) const {
    Value a = tape.param(*store_, e.a);
    Value b = tape.param(*store_, e.b);
    return matmul(b, matmul(a, h));
}

GateResult MoEAdapter::route(Tape& tape, Value h) const {
    GateResult out;
    std::size_t k_eff = std::min(cfg_.k, cfg_.n_routed);
    if (k_eff == 0) return out;

    Value logits = matmul(h, tape.param(*store_, router_));  // [n_routed]
    const std::vector<double>& lv = logits.val().data;

    std::vector<std::size_t> order(lv.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        if (lv[x] != lv[y]) return lv[x] > lv[y];
        return x < y;
    });
    out.indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k_eff));
    out.weights = softmax(gather(logits, out.indices), 0);
    return out;
}

Value MoEAdapter::forward(Tape& tape, Value h, LoadStats* stats) const {
    if (h.rank() != 1 || h.size() != d_)
        throw std::invalid_argument("MoEAdapter: token shape " + ag::shape_str(h.shape()) +
                                    ", expected [" + std::to_string(d_) + "]");
    Value out = tape.constant(Tensor::zeros({d_}));
    for (const Expert& e : shared_) out = add(out, lora_apply(tape, h, e));

    GateResult gate = route(tape, h);
    if (stats && !gate.indices.empty()) stats->record(gate.indices);
    for (std::size_t i = 0; i < gate.indices.size(); ++i) {
        Value gi = gather(gate.weights, {i});  // [1], broadcasts over the token
        out = add(out, mul(lora_apply(tape, h, routed_[gate.indices[i]]), gi));
    }
    return out;
}

Value MoEAdapter::expert_output(Tape& tape, Value h, std::size_t expert) const {
    if (expert >= n_experts())
        throw std::invalid_argument("MoEAdapter: expert " + std::to_string(expert) + " out of " +
                                    std::to_string(n_experts()));
    const Expert& e =
        expert < cfg_.n_shared ? shared_[expert] : routed_[expert - cfg_.n_shared];
    return lora_apply(tape, h, e);
}

std::vector<double> load_stats(const MoEAdapter& adapter, const std::vector<Tensor>& tokens) {
    if (tokens.empty()) throw std::invalid_argument("load_stats: empty token batch");
    LoadStats stats(adapter.config().n_routed);
    Tape tape;
    tape.set_grad_enabled(false);
    for (const Tensor& t : tokens) {
        GateResult g = adapter.route(tape, tape.constant(t));
        stats.record(g.indices);
    }
    return stats.shares();
}

}  // namespace eva
