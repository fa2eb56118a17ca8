#include "eva/model.hpp"

#include <cmath>

namespace eva {

using ag::Tape;
using ag::Tensor;
using ag::Value;

EvaModel::EvaModel(const ModelConfig& cfg, std::size_t n_states, std::size_t n_objects)
    : cfg_(cfg) {
    cfg_.enc.validate();
    // separate init streams keep base weights and prompts identical across
    // adapter on/off configurations sharing a seed
    Rng img_rng(mix_seed(cfg.seed, 11));
    Rng txt_rng(mix_seed(cfg.seed, 12));
    Rng img_adapter_rng(mix_seed(cfg.seed, 13));
    Rng txt_adapter_rng(mix_seed(cfg.seed, 14));
    Rng prompt_rng(mix_seed(cfg.seed, 15));

    image_ = std::make_unique<ImageEncoder>(store_, cfg_.enc, img_rng);
    text_ = std::make_unique<TextEncoder>(store_, cfg_.enc, txt_rng);
    image_->attach_adapters(img_adapter_rng);
    text_->attach_adapters(txt_adapter_rng);
    prompts_ = std::make_unique<PromptBank>(store_, cfg_.enc, n_states, n_objects, prompt_rng);

    // softplus(raw) == 1 at init
    double raw0 = std::log(std::exp(1.0) - 1.0);
    tau_s_raw_ = store_.add("align.tau_s_raw", Tensor::scalar(raw0), true);
    tau_o_raw_ = store_.add("align.tau_o_raw", Tensor::scalar(raw0), true);
}

Value EvaModel::tau_s(Tape& tape) const { return softplus(tape.param(store_, tau_s_raw_)); }
Value EvaModel::tau_o(Tape& tape) const { return softplus(tape.param(store_, tau_o_raw_)); }

Value EvaModel::comp_features(Tape& tape, const std::vector<Pair>& comps) const {
    std::vector<Value> rows;
    rows.reserve(comps.size());
    for (const Pair& p : comps)
        rows.push_back(text_->encode(tape, prompts_->comp_prompt(tape, p.first, p.second)));
    return stack_rows(rows);
}

Value EvaModel::state_features(Tape& tape, std::vector<LoadStats>* stats) const {
    std::vector<Value> rows;
    rows.reserve(n_states());
    for (std::size_t s = 0; s < n_states(); ++s)
        rows.push_back(text_->encode(tape, prompts_->state_prompt(tape, s), stats));
    return stack_rows(rows);
}

Value EvaModel::object_features(Tape& tape, std::vector<LoadStats>* stats) const {
    std::vector<Value> rows;
    rows.reserve(n_objects());
    for (std::size_t o = 0; o < n_objects(); ++o)
        rows.push_back(text_->encode(tape, prompts_->object_prompt(tape, o), stats));
    return stack_rows(rows);
}

}  // namespace eva
