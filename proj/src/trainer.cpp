#include "eva/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "eva/evaluator.hpp"
#include "eva/rng.hpp"
#include "json.hpp"

namespace eva {

using ag::Gradients;
using ag::Tape;
using ag::Tensor;
using ag::Value;

void adam_step(ag::ParameterStore& store, const Gradients& grads, AdamState& state, double lr,
               double weight_decay) {
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    ++state.t;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
    for (auto& p : store) {
        if (!p.trainable) continue;
        Tensor g = grads.get(p.name, p.value.shape);
        for (double gv : g.data)
            if (!std::isfinite(gv))
                throw NumericalError("adam_step: non-finite gradient for " + p.name);
        AdamState::Slot& slot = state.slots[p.name];
        if (slot.m.empty()) {
            slot.m.assign(p.value.size(), 0.0);
            slot.v.assign(p.value.size(), 0.0);
        }
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            double gv = g.data[i];
            slot.m[i] = beta1 * slot.m[i] + (1.0 - beta1) * gv;
            slot.v[i] = beta2 * slot.v[i] + (1.0 - beta2) * gv * gv;
            double mhat = slot.m[i] / bc1;
            double vhat = slot.v[i] / bc2;
            p.value.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            if (weight_decay > 0.0) p.value.data[i] -= lr * weight_decay * p.value.data[i];
        }
    }
}

std::string EpochLog::to_json() const {
    nlohmann::json j = {{"epoch", epoch},       {"loss", loss},       {"loss_c", loss_c},
                        {"loss_s", loss_s},     {"loss_o", loss_o},   {"loss_sv", loss_sv},
                        {"loss_ov", loss_ov},   {"val_auc", val_auc}};
    return j.dump();
}

namespace {

double validation_auc(const EvaModel& model, const Dataset& ds, const TrainConfig& cfg) {
    EvalConfig ec;
    ec.mode = WorldMode::closed;
    ec.phase = Phase::val;
    ec.beta = cfg.beta;
    ec.t2i_mode = cfg.align.t2i_mode;
    return evaluate(model, ds, ec).auc;
}

}  // namespace

TrainResult train(EvaModel& model, const Dataset& ds, const TrainConfig& cfg,
                  const std::string& config_json, std::ostream* log_stream) {
    if (!ds.has_tokens) throw std::invalid_argument("train: dataset has no token payloads");
    TargetSpace target = train_target(ds.space);
    const std::vector<std::size_t>& train_ids = ds.of(Split::train);
    if (train_ids.empty()) throw std::invalid_argument("train: empty training split");

    // precompute label positions; fails loudly for labels outside C^s
    std::vector<std::size_t> comp_pos(ds.samples.size(), 0);
    for (std::size_t id : train_ids)
        comp_pos[id] =
            target.position(ds.space, {ds.samples[id].state, ds.samples[id].object});

    TrainResult result;
    result.best = snapshot(model.params(), config_json, cfg.seed, 0);
    result.best_val_auc = validation_auc(model, ds, cfg);
    result.best_epoch = 0;

    AdamState adam;
    Rng shuffle_rng(mix_seed(cfg.seed, 41));
    std::vector<std::size_t> order(train_ids.begin(), train_ids.end());

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        EpochLog log;
        log.epoch = epoch;
        std::size_t n_batches = 0;

        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::size_t end = std::min(order.size(), start + cfg.batch_size);
            Tape tape;
            BatchEncodings enc;
            std::vector<Value> feats;
            for (std::size_t i = start; i < end; ++i) {
                const Sample& s = ds.samples[order[i]];
                EncoderOutput out = model.image().encode(tape, s.tokens);
                feats.push_back(out.global);
                enc.variants.push_back(out.variants);
                enc.comp_labels.push_back(comp_pos[order[i]]);
                enc.state_labels.push_back(s.state);
                enc.object_labels.push_back(s.object);
            }
            enc.img_feats = stack_rows(feats);
            enc.comp_feats = model.comp_features(tape, target.comps);
            enc.state_feats = model.state_features(tape);
            enc.object_feats = model.object_features(tape);

            LossBundle losses = build_losses(tape, model, enc, target, cfg.align);
            double total = losses.total.scalar();
            if (!std::isfinite(total)) throw NumericalError("train: non-finite loss");

            tape.backward(losses.total);
            adam_step(model.params(), tape.collect(model.params()), adam, cfg.lr,
                      cfg.weight_decay);

            log.loss += total;
            log.loss_c += losses.comp.scalar();
            log.loss_s += losses.state.scalar();
            log.loss_o += losses.object.scalar();
            log.loss_sv += losses.state_v.scalar();
            log.loss_ov += losses.object_v.scalar();
            ++n_batches;
        }
        double inv = 1.0 / static_cast<double>(n_batches);
        log.loss *= inv;
        log.loss_c *= inv;
        log.loss_s *= inv;
        log.loss_o *= inv;
        log.loss_sv *= inv;
        log.loss_ov *= inv;
        log.val_auc = validation_auc(model, ds, cfg);
        if (log_stream) (*log_stream) << log.to_json() << "\n";
        result.logs.push_back(log);

        if (log.val_auc > result.best_val_auc) {
            result.best_val_auc = log.val_auc;
            result.best_epoch = epoch;
            result.best = snapshot(model.params(), config_json, cfg.seed, epoch);
        }
    }
    return result;
}

}  // namespace eva
