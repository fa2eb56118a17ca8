#include "eva/encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace eva {

using ag::ParamId;
using ag::Tape;
using ag::Tensor;
using ag::Value;
using ag::concat_rows;
using ag::stack_rows;

void EncoderConfig::validate() const {
    if (d % heads != 0) throw std::invalid_argument("encoder: d must be divisible by heads");
    if (d_joint > d) throw std::invalid_argument("encoder: d_joint must not exceed d");
    if (prefix_len < 1) throw std::invalid_argument("encoder: prompt prefix needs length >= 1");
    if (depth < 1 || seq_len_image < 2) throw std::invalid_argument("encoder: degenerate dims");
    if (adapters_enabled && moe.rank >= d)
        throw std::invalid_argument("encoder: adapter rank must stay below d");
}

namespace {

Tensor init_matrix(std::size_t r, std::size_t c, Rng& rng) {
    Tensor t = Tensor::zeros({r, c});
    fill_normal(t, rng, 1.0 / std::sqrt(static_cast<double>(r)));
    return t;
}

}  // namespace

TransformerTrunk::TransformerTrunk(ag::ParameterStore& store, const std::string& prefix,
                                   const EncoderConfig& cfg, Rng& base_rng)
    : store_(&store), prefix_(prefix), cfg_(cfg) {
    cfg_.validate();
    std::size_t d = cfg.d;
    for (std::size_t l = 0; l < cfg.depth; ++l) {
        std::string lp = prefix + ".l" + std::to_string(l);
        Layer layer;
        layer.ln1_g = store.add(lp + ".ln1.g", Tensor::full({d}, 1.0), false);
        layer.ln1_b = store.add(lp + ".ln1.b", Tensor::zeros({d}), false);
        layer.wq = store.add(lp + ".attn.wq", init_matrix(d, d, base_rng), false);
        layer.bq = store.add(lp + ".attn.bq", Tensor::zeros({d}), false);
        layer.wk = store.add(lp + ".attn.wk", init_matrix(d, d, base_rng), false);
        layer.bk = store.add(lp + ".attn.bk", Tensor::zeros({d}), false);
        layer.wv = store.add(lp + ".attn.wv", init_matrix(d, d, base_rng), false);
        layer.bv = store.add(lp + ".attn.bv", Tensor::zeros({d}), false);
        layer.wo = store.add(lp + ".attn.wo", init_matrix(d, d, base_rng), false);
        layer.bo = store.add(lp + ".attn.bo", Tensor::zeros({d}), false);
        layer.ln2_g = store.add(lp + ".ln2.g", Tensor::full({d}, 1.0), false);
        layer.ln2_b = store.add(lp + ".ln2.b", Tensor::zeros({d}), false);
        std::size_t hidden = d * cfg.ffn_mult;
        layer.w1 = store.add(lp + ".ffn.w1", init_matrix(d, hidden, base_rng), false);
        layer.b1 = store.add(lp + ".ffn.b1", Tensor::zeros({hidden}), false);
        layer.w2 = store.add(lp + ".ffn.w2", init_matrix(hidden, d, base_rng), false);
        layer.b2 = store.add(lp + ".ffn.b2", Tensor::zeros({d}), false);
        layers_.push_back(std::move(layer));
    }
    ln_f_g_ = store.add(prefix + ".ln_f.g", Tensor::full({d}, 1.0), false);
    ln_f_b_ = store.add(prefix + ".ln_f.b", Tensor::zeros({d}), false);
    proj_ = store.add(prefix + ".proj", init_matrix(d, cfg.d_joint, base_rng), false);
}

void TransformerTrunk::attach_adapters(Rng& adapter_rng) {
    if (!cfg_.adapters_enabled) return;
    for (std::size_t l = 0; l < layers_.size(); ++l)
        layers_[l].moe = std::make_unique<MoEAdapter>(
            *store_, prefix_ + ".l" + std::to_string(l) + ".moe", cfg_.d, cfg_.moe, adapter_rng);
}

const MoEAdapter* TransformerTrunk::adapter(std::size_t layer) const {
    return layers_.at(layer).moe.get();
}

std::size_t TransformerTrunk::n_variants() const {
    if (!cfg_.adapters_enabled || !layers_.back().moe) return 1;
    return layers_.back().moe->n_experts();
}

Value TransformerTrunk::affine_norm(Tape& tape, Value x, ParamId g, ParamId b) const {
    Value normed = layer_norm(x);
    return add(mul(normed, tape.param(*store_, g)), tape.param(*store_, b));
}

Value TransformerTrunk::attention(Tape& tape, Value x, std::size_t layer) const {
    const Layer& ly = layers_[layer];
    Value q = add(matmul(x, tape.param(*store_, ly.wq)), tape.param(*store_, ly.bq));
    Value k = add(matmul(x, tape.param(*store_, ly.wk)), tape.param(*store_, ly.bk));
    Value v = add(matmul(x, tape.param(*store_, ly.wv)), tape.param(*store_, ly.bv));

    std::size_t dh = cfg_.head_dim();
    double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Value> heads;
    heads.reserve(cfg_.heads);
    for (std::size_t h = 0; h < cfg_.heads; ++h) {
        Value qh = slice_cols(q, h * dh, (h + 1) * dh);
        Value kh = slice_cols(k, h * dh, (h + 1) * dh);
        Value vh = slice_cols(v, h * dh, (h + 1) * dh);
        Value scores = scale(matmul(qh, transpose(kh)), inv_scale);
        heads.push_back(matmul(softmax(scores, 1), vh));
    }
    Value merged = cfg_.heads == 1 ? heads[0] : concat_cols(heads);
    return add(matmul(merged, tape.param(*store_, ly.wo)), tape.param(*store_, ly.bo));
}

TransformerTrunk::TrunkOut TransformerTrunk::run(Tape& tape, Value h,
                                                 std::vector<LoadStats>* layer_stats) const {
    if (layer_stats && layer_stats->size() != layers_.size())
        throw std::invalid_argument("trunk: layer_stats must hold one slot per layer");
    TrunkOut out;
    std::size_t seq = h.val().dim(0);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const Layer& ly = layers_[l];
        Value u = add(h, attention(tape, affine_norm(tape, h, ly.ln1_g, ly.ln1_b), l));
        Value n = affine_norm(tape, u, ly.ln2_g, ly.ln2_b);
        Value f = add(matmul(gelu(add(matmul(n, tape.param(*store_, ly.w1)),
                                      tape.param(*store_, ly.b1))),
                             tape.param(*store_, ly.w2)),
                      tape.param(*store_, ly.b2));
        Value resid = add(u, f);
        Value next = resid;
        if (ly.moe) {
            LoadStats* stats = layer_stats ? &(*layer_stats)[l] : nullptr;
            std::vector<Value> mixed;
            mixed.reserve(seq);
            for (std::size_t t = 0; t < seq; ++t)
                mixed.push_back(ly.moe->forward(tape, row(n, t), stats));
            next = add(resid, stack_rows(mixed));
        }
        if (l + 1 == layers_.size()) {
            out.last_normed = n;
            out.last_resid_cls = row(resid, 0);
        }
        h = next;
    }
    out.hidden = h;
    return out;
}

// ---- image side ---------------------------------------------------------------

ImageEncoder::ImageEncoder(ag::ParameterStore& store, const EncoderConfig& cfg, Rng& base_rng)
    : TransformerTrunk(store, "img", cfg, base_rng) {
    in_proj_ = store.add("img.in_proj", init_matrix(cfg.d_in, cfg.d, base_rng), false);
    // positional table with the CLS embedding folded into row 0
    Tensor pos = Tensor::zeros({cfg.seq_len_image, cfg.d});
    fill_normal(pos, base_rng, 0.02);
    Tensor cls = Tensor::zeros({cfg.d});
    fill_normal(cls, base_rng, 0.02);
    for (std::size_t c = 0; c < cfg.d; ++c) pos.at(0, c) += cls.data[c];
    pos_cls_ = store.add("img.pos_cls", std::move(pos), false);
}

EncoderOutput ImageEncoder::encode(Tape& tape, const Tensor& tokens,
                                   std::vector<LoadStats>* layer_stats) const {
    if (tokens.rank() != 2 || tokens.dim(0) != cfg_.seq_len_image || tokens.dim(1) != cfg_.d_in)
        throw std::invalid_argument("encode_image: token shape " + ag::shape_str(tokens.shape) +
                                    ", expected [" + std::to_string(cfg_.seq_len_image) + "," +
                                    std::to_string(cfg_.d_in) + "]");
    Value x = tape.constant(tokens);
    Value h = add(matmul(x, tape.param(*store_, in_proj_)), tape.param(*store_, pos_cls_));
    TrunkOut trunk = run(tape, h, layer_stats);

    Value proj = tape.param(*store_, proj_);
    auto to_joint = [&](Value pre) {
        return l2_normalize(matmul(affine_norm(tape, pre, ln_f_g_, ln_f_b_), proj));
    };

    EncoderOutput out;
    out.global = to_joint(row(trunk.hidden, 0));

    const MoEAdapter* moe = layers_.back().moe.get();
    if (!moe) {
        out.variants = stack_rows({out.global});
        return out;
    }
    // single-expert substitution at the CLS position: every expert evaluated
    // ungated regardless of routing
    Value n_cls = row(trunk.last_normed, 0);
    std::vector<Value> rows;
    rows.reserve(moe->n_experts());
    for (std::size_t e = 0; e < moe->n_experts(); ++e)
        rows.push_back(to_joint(add(trunk.last_resid_cls, moe->expert_output(tape, n_cls, e))));
    out.variants = stack_rows(rows);
    return out;
}

// ---- prompts -------------------------------------------------------------------

PromptBank::PromptBank(ag::ParameterStore& store, const EncoderConfig& cfg, std::size_t n_states,
                       std::size_t n_objects, Rng& rng)
    : store_(&store), n_states_(n_states), n_objects_(n_objects) {
    Tensor prefix = Tensor::zeros({cfg.prefix_len, cfg.d});
    fill_normal(prefix, rng, 0.02);
    // the three families start from one prefix draw and then train apart
    prefix_c_ = store.add("prompt.prefix_c", prefix, true);
    prefix_s_ = store.add("prompt.prefix_s", prefix, true);
    prefix_o_ = store.add("prompt.prefix_o", prefix, true);
    Tensor se = Tensor::zeros({n_states, cfg.d});
    fill_normal(se, rng, 0.02);
    state_emb_ = store.add("prompt.state_emb", std::move(se), true);
    Tensor oe = Tensor::zeros({n_objects, cfg.d});
    fill_normal(oe, rng, 0.02);
    object_emb_ = store.add("prompt.object_emb", std::move(oe), true);
}

Value PromptBank::comp_prompt(Tape& tape, std::size_t s, std::size_t o) const {
    if (s >= n_states_ || o >= n_objects_)
        throw std::invalid_argument("comp_prompt: primitive id out of range");
    return concat_rows({tape.param(*store_, prefix_c_),
                        gather_rows(tape.param(*store_, state_emb_), {s}),
                        gather_rows(tape.param(*store_, object_emb_), {o})});
}

Value PromptBank::state_prompt(Tape& tape, std::size_t s) const {
    if (s >= n_states_) throw std::invalid_argument("state_prompt: state id out of range");
    return concat_rows({tape.param(*store_, prefix_s_),
                        gather_rows(tape.param(*store_, state_emb_), {s})});
}

Value PromptBank::object_prompt(Tape& tape, std::size_t o) const {
    if (o >= n_objects_) throw std::invalid_argument("object_prompt: object id out of range");
    return concat_rows({tape.param(*store_, prefix_o_),
                        gather_rows(tape.param(*store_, object_emb_), {o})});
}

// ---- text side -----------------------------------------------------------------

TextEncoder::TextEncoder(ag::ParameterStore& store, const EncoderConfig& cfg, Rng& base_rng)
    : TransformerTrunk(store, "txt", cfg, base_rng) {
    Tensor pos = Tensor::zeros({cfg.prefix_len + 2, cfg.d});
    fill_normal(pos, base_rng, 0.02);
    pos_ = store.add("txt.pos", std::move(pos), false);
}

Value TextEncoder::encode(Tape& tape, Value prompt, std::vector<LoadStats>* layer_stats) const {
    std::size_t len = prompt.val().dim(0);
    std::size_t max_len = cfg_.prefix_len + 2;
    if (prompt.rank() != 2 || prompt.val().dim(1) != cfg_.d || len > max_len || len == 0)
        throw std::invalid_argument("encode_text: prompt shape " +
                                    ag::shape_str(prompt.shape()) + " unusable");
    Value h = add(prompt, slice_rows(tape.param(*store_, pos_), 0, len));
    TrunkOut trunk = run(tape, h, layer_stats);
    Value last = row(trunk.hidden, len - 1);
    return l2_normalize(
        matmul(affine_norm(tape, last, ln_f_g_, ln_f_b_), tape.param(*store_, proj_)));
}

}  // namespace eva
