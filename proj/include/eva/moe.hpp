#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "eva/params.hpp"
#include "eva/rng.hpp"
#include "eva/tape.hpp"

namespace eva {

struct MoEConfig {
    std::size_t n_routed = 8;
    std::size_t n_shared = 1;
    std::size_t k = 2;     // activated routed experts per token; 0 = shared-only
    std::size_t rank = 8;  // LoRA rank, must stay below the layer width
};

// Gating decision for one token. `weights` is a distribution over `indices`
// recorded on the tape, so gradients reach the router.
struct GateResult {
    std::vector<std::size_t> indices;  // routed expert ids, selection order
    ag::Value weights;                 // shape [indices.size()]; null when empty
};

// Running token-to-expert assignment counts over routed experts.
class LoadStats {
  public:
    explicit LoadStats(std::size_t n_routed) : counts_(n_routed, 0) {}

    void record(const std::vector<std::size_t>& routed_indices) {
        for (std::size_t i : routed_indices) ++counts_.at(i);
        total_ += routed_indices.size();
    }

    void merge(const LoadStats& other);

    // share_i = assignments to expert i / total assignments
    std::vector<double> shares() const;

    std::size_t total_assignments() const { return total_; }
    std::size_t expert_count() const { return counts_.size(); }

  private:
    std::vector<std::size_t> counts_;
    std::size_t total_ = 0;
};

// Intra-layer adapter: shared LoRA experts that always fire plus routed LoRA
// experts mixed by softmax-over-Top-K router gates. All parameters trainable;
// LoRA B starts at zero so a fresh adapter is an exact no-op.
class MoEAdapter {
  public:
    MoEAdapter(ag::ParameterStore& store, const std::string& prefix, std::size_t d,
               const MoEConfig& cfg, Rng& rng);

    // Softmax over the K largest router logits; ties by lower expert index.
    GateResult route(ag::Tape& tape, ag::Value h) const;

    // Eq-style mixture: sum_i G_i B_i A_i h + shared contributions. Records
    // routed assignments into `stats` when given.
    ag::Value forward(ag::Tape& tape, ag::Value h, LoadStats* stats = nullptr) const;

    // Single expert's ungated output B_e A_e h. Experts are numbered with the
    // shared block first: [0, n_shared) shared, [n_shared, n_experts) routed.
    ag::Value expert_output(ag::Tape& tape, ag::Value h, std::size_t expert) const;

    std::size_t n_experts() const { return cfg_.n_shared + cfg_.n_routed; }
    const MoEConfig& config() const { return cfg_; }
    std::size_t width() const { return d_; }

  private:
    struct Expert {
        ag::ParamId a;  // rank x d
        ag::ParamId b;  // d x rank
    };

    ag::Value lora_apply(ag::Tape& tape, ag::Value h, const Expert& e) const;

    ag::ParameterStore* store_;
    MoEConfig cfg_;
    std::size_t d_;
    ag::ParamId router_ = 0;  // d x n_routed
    std::vector<Expert> shared_;
    std::vector<Expert> routed_;
};

// Spec-level load report for one batch of tokens; throws on an empty batch.
std::vector<double> load_stats(const MoEAdapter& adapter,
                               const std::vector<ag::Tensor>& tokens);

}  // namespace eva
