#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "eva/alignment.hpp"
#include "eva/checkpoint.hpp"
#include "eva/dataset.hpp"
#include "eva/model.hpp"

namespace eva {

// Raised for NaN/inf gradients or losses; the CLI maps it to exit code 2.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    double lr = 1e-4;
    double weight_decay = 1e-4;
    std::size_t epochs = 20;
    std::size_t batch_size = 64;
    std::uint64_t seed = 7;  // batch shuffling stream
    double beta = 0.5;       // validation-AUC inference mixing
    AlignConfig align;
};

// Adam moments per trainable parameter plus the shared step counter.
struct AdamState {
    struct Slot {
        std::vector<double> m, v;
    };
    std::unordered_map<std::string, Slot> slots;
    std::uint64_t t = 0;
};

// Bias-corrected Adam with decoupled weight decay; frozen parameters are
// never touched. beta1=0.9, beta2=0.999, eps=1e-8.
void adam_step(ag::ParameterStore& store, const ag::Gradients& grads, AdamState& state,
               double lr, double weight_decay);

struct EpochLog {
    std::size_t epoch = 0;
    double loss = 0.0, loss_c = 0.0, loss_s = 0.0, loss_o = 0.0, loss_sv = 0.0, loss_ov = 0.0;
    double val_auc = 0.0;
    std::string to_json() const;
};

struct TrainResult {
    Checkpoint best;  // highest validation AUC (earliest epoch on ties)
    std::vector<EpochLog> logs;
    double best_val_auc = 0.0;
    std::size_t best_epoch = 0;
};

// Epoch loop over the seen split with per-epoch closed-world validation.
// Writes one JSON log line per epoch to `log_stream` when given.
TrainResult train(EvaModel& model, const Dataset& ds, const TrainConfig& cfg,
                  const std::string& config_json, std::ostream* log_stream = nullptr);

}  // namespace eva
