#pragma once

#include <cstdint>
#include <memory>

#include "eva/encoder.hpp"
#include "eva/labelspace.hpp"

namespace eva {

struct ModelConfig {
    EncoderConfig enc;
    double tau = 0.01;       // fixed contrastive temperature
    std::uint64_t seed = 1;  // model init stream
};

// Both encoders plus prompt bank and the trainable primitive temperatures.
// Base encoder weights are frozen at init; adapters, prompts and the two
// temperature scalars are the whole trainable set.
class EvaModel {
  public:
    EvaModel(const ModelConfig& cfg, std::size_t n_states, std::size_t n_objects);

    // submodules keep pointers into the owned store
    EvaModel(const EvaModel&) = delete;
    EvaModel& operator=(const EvaModel&) = delete;
    EvaModel(EvaModel&&) = delete;
    EvaModel& operator=(EvaModel&&) = delete;

    ag::ParameterStore& params() { return store_; }
    const ag::ParameterStore& params() const { return store_; }

    const ModelConfig& config() const { return cfg_; }
    std::size_t n_states() const { return prompts_->n_states(); }
    std::size_t n_objects() const { return prompts_->n_objects(); }
    std::size_t n_variants() const { return image_->n_variants(); }
    double tau() const { return cfg_.tau; }

    const ImageEncoder& image() const { return *image_; }
    const TextEncoder& text() const { return *text_; }
    const PromptBank& prompts() const { return *prompts_; }

    // softplus-parameterized, so positive under any parameter update
    ag::Value tau_s(ag::Tape& tape) const;
    ag::Value tau_o(ag::Tape& tape) const;

    // text feature tables; one row per composition / primitive, unit norm
    ag::Value comp_features(ag::Tape& tape, const std::vector<Pair>& comps) const;
    ag::Value state_features(ag::Tape& tape, std::vector<LoadStats>* stats = nullptr) const;
    ag::Value object_features(ag::Tape& tape, std::vector<LoadStats>* stats = nullptr) const;

  private:
    ModelConfig cfg_;
    ag::ParameterStore store_;
    std::unique_ptr<ImageEncoder> image_;
    std::unique_ptr<TextEncoder> text_;
    std::unique_ptr<PromptBank> prompts_;
    ag::ParamId tau_s_raw_, tau_o_raw_;
};

}  // namespace eva
