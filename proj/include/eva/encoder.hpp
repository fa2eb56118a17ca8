#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "eva/moe.hpp"
#include "eva/params.hpp"
#include "eva/rng.hpp"
#include "eva/tape.hpp"

namespace eva {

struct EncoderConfig {
    std::size_t depth = 2;
    std::size_t d = 64;
    std::size_t heads = 4;
    std::size_t d_joint = 32;
    std::size_t seq_len_image = 17;  // 16 patch slots + CLS slot at row 0
    std::size_t prefix_len = 3;      // prompt prefix length a
    std::size_t d_in = 16;           // raw patch-token width
    std::size_t ffn_mult = 2;
    MoEConfig moe;
    bool adapters_enabled = true;

    std::size_t head_dim() const { return d / heads; }
    void validate() const;
};

struct EncoderOutput {
    ag::Value global;    // unit-norm joint feature
    ag::Value variants;  // image only: n_variants x d_joint, unit-norm rows
};

// Pre-norm transformer trunk with a MoE adapter parallel to the FFN:
//   u = h + Attn(LN1(h));  h' = u + FFN(LN2(u)) + MoE(LN2(u))
// Base weights are frozen; only the adapters train.
class TransformerTrunk {
  public:
    TransformerTrunk(ag::ParameterStore& store, const std::string& prefix,
                     const EncoderConfig& cfg, Rng& base_rng);

    void attach_adapters(Rng& adapter_rng);

    struct TrunkOut {
        ag::Value hidden;          // seq x d after the last layer
        ag::Value last_normed;     // LN2 input to the last layer's FFN/MoE
        ag::Value last_resid_cls;  // row 0 of u + FFN(LN2(u)) in the last layer
    };

    TrunkOut run(ag::Tape& tape, ag::Value h, std::vector<LoadStats>* layer_stats) const;

    const MoEAdapter* adapter(std::size_t layer) const;
    std::size_t n_variants() const;
    const EncoderConfig& config() const { return cfg_; }

  protected:
    ag::Value attention(ag::Tape& tape, ag::Value x, std::size_t layer) const;
    ag::Value affine_norm(ag::Tape& tape, ag::Value x, ag::ParamId g, ag::ParamId b) const;

    struct Layer {
        ag::ParamId ln1_g, ln1_b;
        ag::ParamId wq, bq, wk, bk, wv, bv, wo, bo;
        ag::ParamId ln2_g, ln2_b;
        ag::ParamId w1, b1, w2, b2;
        std::unique_ptr<MoEAdapter> moe;
    };

    ag::ParameterStore* store_;
    std::string prefix_;
    EncoderConfig cfg_;
    std::vector<Layer> layers_;
    ag::ParamId ln_f_g_, ln_f_b_;
    ag::ParamId proj_;  // d x d_joint
};

// Image side: projects raw patch tokens into the trunk, reads the CLS
// position, and extracts per-expert feature variants at the last layer.
class ImageEncoder : public TransformerTrunk {
  public:
    ImageEncoder(ag::ParameterStore& store, const EncoderConfig& cfg, Rng& base_rng);

    EncoderOutput encode(ag::Tape& tape, const ag::Tensor& tokens,
                         std::vector<LoadStats>* layer_stats = nullptr) const;

  private:
    ag::ParamId in_proj_;   // d_in x d
    ag::ParamId pos_cls_;   // seq x d, positional table with CLS embedding folded in
};

// Learnable prompt parameters: three prefix banks plus shared primitive
// embeddings (one vector per state/object used by every prompt family).
class PromptBank {
  public:
    PromptBank(ag::ParameterStore& store, const EncoderConfig& cfg, std::size_t n_states,
               std::size_t n_objects, Rng& rng);

    ag::Value comp_prompt(ag::Tape& tape, std::size_t s, std::size_t o) const;   // (a+2) x d
    ag::Value state_prompt(ag::Tape& tape, std::size_t s) const;                 // (a+1) x d
    ag::Value object_prompt(ag::Tape& tape, std::size_t o) const;

    std::size_t n_states() const { return n_states_; }
    std::size_t n_objects() const { return n_objects_; }

  private:
    ag::ParameterStore* store_;
    std::size_t n_states_, n_objects_;
    ag::ParamId prefix_c_, prefix_s_, prefix_o_;  // a x d each
    ag::ParamId state_emb_, object_emb_;
};

// Text side: consumes prompt matrices, reads the last token position.
class TextEncoder : public TransformerTrunk {
  public:
    TextEncoder(ag::ParameterStore& store, const EncoderConfig& cfg, Rng& base_rng);

    ag::Value encode(ag::Tape& tape, ag::Value prompt,
                     std::vector<LoadStats>* layer_stats = nullptr) const;

  private:
    ag::ParamId pos_;  // (a+2) x d
};

}  // namespace eva
