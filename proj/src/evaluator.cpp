#include "eva/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace eva {

using ag::Tape;
using ag::Tensor;
using ag::Value;
using nlohmann::json;

std::vector<double> predict_scores(const std::vector<double>& comp_probs,
                                   const std::vector<double>& state_scores,
                                   const std::vector<double>& object_scores,
                                   const TargetSpace& space, double beta) {
    if (comp_probs.size() != space.comps.size())
        throw std::invalid_argument("predict_scores: composition row size mismatch");
    std::vector<double> out(comp_probs.size());
    for (std::size_t c = 0; c < out.size(); ++c)
        out[c] = comp_probs[c] +
                 beta * (state_scores[space.state_of[c]] + object_scores[space.object_of[c]]);
    return out;
}

std::vector<std::size_t> rank_topk(const std::vector<double>& scores, std::size_t k) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    order.resize(std::min(k, order.size()));
    return order;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct SubsetCounts {
    std::size_t seen_total = 0, unseen_total = 0;
};

// argmax over compositions, optionally restricted and/or biased on unseen
std::size_t biased_argmax(const double* row, std::size_t n, const std::vector<bool>& comp_seen,
                          double bias) {
    std::size_t best = static_cast<std::size_t>(-1);
    double bv = 0.0;
    if (bias == kInf || bias == -kInf) {
        bool want_seen = bias == -kInf;
        for (std::size_t c = 0; c < n; ++c) {
            if (comp_seen[c] != want_seen) continue;
            if (best == static_cast<std::size_t>(-1) || row[c] > bv) {
                best = c;
                bv = row[c];
            }
        }
        return best;
    }
    for (std::size_t c = 0; c < n; ++c) {
        double v = row[c] + (comp_seen[c] ? 0.0 : bias);
        if (best == static_cast<std::size_t>(-1) || v > bv) {
            best = c;
            bv = v;
        }
    }
    return best;
}

}  // namespace

SweepResult calibration_sweep(const Tensor& scores, const std::vector<std::size_t>& truth,
                              const std::vector<bool>& truth_seen,
                              const std::vector<bool>& comp_seen) {
    std::size_t n = scores.dim(0), c = scores.dim(1);
    if (truth.size() != n || truth_seen.size() != n || comp_seen.size() != c)
        throw std::invalid_argument("calibration_sweep: inconsistent inputs");

    SubsetCounts counts;
    for (bool s : truth_seen) (s ? counts.seen_total : counts.unseen_total)++;
    if (counts.seen_total == 0)
        throw std::invalid_argument("calibration_sweep: seen-labelled subset is empty");
    if (counts.unseen_total == 0)
        throw std::invalid_argument("calibration_sweep: unseen-labelled subset is empty");
    bool any_seen_comp = std::find(comp_seen.begin(), comp_seen.end(), true) != comp_seen.end();
    bool any_unseen_comp = std::find(comp_seen.begin(), comp_seen.end(), false) != comp_seen.end();
    if (!any_seen_comp || !any_unseen_comp)
        throw std::invalid_argument("calibration_sweep: target space lacks a seen or unseen side");

    // candidate biases: the per-sample max-seen minus max-unseen score gaps
    // determine every switching point; midpoints and outer offsets realize the
    // open intervals between them
    std::set<double> gap_set;
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = scores.data.data() + i * c;
        double best_seen_score = -kInf, best_unseen_score = -kInf;
        for (std::size_t j = 0; j < c; ++j) {
            if (comp_seen[j])
                best_seen_score = std::max(best_seen_score, row[j]);
            else
                best_unseen_score = std::max(best_unseen_score, row[j]);
        }
        gap_set.insert(best_seen_score - best_unseen_score);
    }
    std::vector<double> gaps(gap_set.begin(), gap_set.end());
    std::vector<double> candidates;
    candidates.push_back(-kInf);
    candidates.push_back(gaps.front() - 1.0);
    for (std::size_t i = 0; i < gaps.size(); ++i) {
        candidates.push_back(gaps[i]);
        if (i + 1 < gaps.size()) candidates.push_back(0.5 * (gaps[i] + gaps[i + 1]));
    }
    candidates.push_back(gaps.back() + 1.0);
    candidates.push_back(kInf);

    SweepResult result;
    for (double bias : candidates) {
        std::size_t seen_ok = 0, unseen_ok = 0;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t pred = biased_argmax(scores.data.data() + i * c, c, comp_seen, bias);
            bool correct = truth[i] != kNoTruth && pred == truth[i];
            if (correct) (truth_seen[i] ? seen_ok : unseen_ok)++;
        }
        SweepPoint p;
        p.bias = bias;
        p.seen_acc = static_cast<double>(seen_ok) / static_cast<double>(counts.seen_total);
        p.unseen_acc = static_cast<double>(unseen_ok) / static_cast<double>(counts.unseen_total);
        result.curve.push_back(p);
        result.best_seen = std::max(result.best_seen, p.seen_acc);
        result.best_unseen = std::max(result.best_unseen, p.unseen_acc);
        if (p.seen_acc + p.unseen_acc > 0.0)
            result.best_hm = std::max(result.best_hm, 2.0 * p.seen_acc * p.unseen_acc /
                                                          (p.seen_acc + p.unseen_acc));
    }

    // trapezoid along the bias-ordered polyline; seen is non-increasing and
    // unseen non-decreasing, so this walks the staircase frontier and the
    // magnitude is the area under it
    double auc = 0.0;
    for (std::size_t i = 0; i + 1 < result.curve.size(); ++i)
        auc += (result.curve[i].seen_acc - result.curve[i + 1].seen_acc) *
               0.5 * (result.curve[i].unseen_acc + result.curve[i + 1].unseen_acc);
    result.auc = auc;
    return result;
}

TargetSpace feasibility_filter(const LabelSpace& space, const Tensor& state_feats,
                               const Tensor& object_feats, double threshold) {
    if (threshold < -1.0 || threshold > 1.0)
        throw std::invalid_argument("feasibility_filter: threshold must lie in [-1, 1]");
    std::size_t ns = space.states.size(), no = space.objects.size();
    if (state_feats.dim(0) != ns || object_feats.dim(0) != no)
        throw std::invalid_argument("feasibility_filter: feature tables do not match label space");

    // partners under C^s
    std::vector<std::vector<std::size_t>> objects_of_state(ns), states_of_object(no);
    for (const Pair& p : space.train_pairs) {
        objects_of_state[p.first].push_back(p.second);
        states_of_object[p.second].push_back(p.first);
    }
    auto cosine = [](const Tensor& m, std::size_t a, std::size_t b) {
        double s = 0.0;
        for (std::size_t c = 0; c < m.dim(1); ++c) s += m.at(a, c) * m.at(b, c);
        return s;
    };

    std::vector<Pair> kept;
    for (std::size_t s = 0; s < ns; ++s) {
        for (std::size_t o = 0; o < no; ++o) {
            Pair p{s, o};
            if (space.is_seen(p)) {
                kept.push_back(p);
                continue;
            }
            double obj_side = -1.0;
            for (std::size_t other : objects_of_state[s])
                obj_side = std::max(obj_side, cosine(object_feats, o, other));
            double state_side = -1.0;
            for (std::size_t other : states_of_object[o])
                state_side = std::max(state_side, cosine(state_feats, s, other));
            if (0.5 * (obj_side + state_side) >= threshold) kept.push_back(p);
        }
    }
    return make_target(space, kept);
}

std::string EvalReport::report_json() const {
    json j;
    j["mode"] = mode;
    j["best_seen"] = best_seen;
    j["best_unseen"] = best_unseen;
    j["auc"] = auc;
    j["best_hm"] = best_hm;
    json curve_json = json::array();
    for (const SweepPoint& p : curve) {
        json bias;
        if (p.bias == kInf)
            bias = "inf";
        else if (p.bias == -kInf)
            bias = "-inf";
        else
            bias = p.bias;
        curve_json.push_back({bias, p.seen_acc, p.unseen_acc});
    }
    j["curve"] = curve_json;
    return j.dump(2);
}

std::string EvalReport::curve_csv() const {
    std::ostringstream out;
    out << std::setprecision(17);
    out << "bias,seen_acc,unseen_acc\n";
    for (const SweepPoint& p : curve) {
        if (p.bias == kInf)
            out << "inf";
        else if (p.bias == -kInf)
            out << "-inf";
        else
            out << p.bias;
        out << "," << p.seen_acc << "," << p.unseen_acc << "\n";
    }
    return out.str();
}

EvalReport evaluate(const EvaModel& model, const Dataset& ds, const EvalConfig& cfg) {
    if (model.n_states() != ds.space.states.size() ||
        model.n_objects() != ds.space.objects.size())
        throw std::invalid_argument("evaluate: model and dataset label spaces disagree");
    if (!ds.has_tokens) throw std::invalid_argument("evaluate: dataset has no token payloads");

    // target space and frozen text features
    Tape text_tape;
    text_tape.set_grad_enabled(false);
    Tensor state_feats, object_feats;
    {
        Value sf = model.state_features(text_tape);
        Value of = model.object_features(text_tape);
        state_feats = sf.val();
        object_feats = of.val();
    }
    TargetSpace target;
    if (cfg.mode == WorldMode::closed) {
        target = closed_target(ds.space, cfg.phase);
    } else {
        target = feasibility_filter(ds.space, state_feats, object_feats,
                                    cfg.feasibility_threshold);
    }
    Tensor comp_feats;
    {
        Tape t;
        t.set_grad_enabled(false);
        comp_feats = model.comp_features(t, target.comps).val();
    }

    std::vector<std::size_t> sample_ids;
    const auto& seen_ids =
        ds.of(cfg.phase == Phase::val ? Split::val_seen : Split::test_seen);
    const auto& unseen_ids =
        ds.of(cfg.phase == Phase::val ? Split::val_unseen : Split::test_unseen);
    sample_ids.insert(sample_ids.end(), seen_ids.begin(), seen_ids.end());
    sample_ids.insert(sample_ids.end(), unseen_ids.begin(), unseen_ids.end());
    if (sample_ids.empty()) throw std::invalid_argument("evaluate: evaluation split is empty");

    std::size_t n = sample_ids.size(), c = target.comps.size();
    Tensor combined = Tensor::zeros({n, c});
    std::vector<std::size_t> truth(n, kNoTruth);
    std::vector<bool> truth_seen(n, false);
    EvalReport report;
    report.image_features = Tensor::zeros({n, model.config().enc.d_joint});

    double tau_s, tau_o;
    {
        Tape tt;
        tt.set_grad_enabled(false);
        tau_s = model.tau_s(tt).scalar();
        tau_o = model.tau_o(tt).scalar();
    }

    for (std::size_t i = 0; i < n; ++i) {
        const Sample& sample = ds.samples[sample_ids[i]];
        Tape tape;
        tape.set_grad_enabled(false);
        EncoderOutput out = model.image().encode(tape, sample.tokens);
        const std::vector<double>& feat = out.global.val().data;
        std::copy(feat.begin(), feat.end(),
                  report.image_features.data.begin() + i * feat.size());

        std::vector<double> probs = composition_probs(feat, comp_feats, model.tau());
        std::vector<double> logits(c);
        for (std::size_t j = 0; j < c; ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < feat.size(); ++k) dot += feat[k] * comp_feats.at(j, k);
            logits[j] = dot / model.tau();
        }
        std::vector<double> ps = t2i_state_scores(logits, probs, target, tau_s, cfg.t2i_mode);
        std::vector<double> po = t2i_object_scores(logits, probs, target, tau_o, cfg.t2i_mode);
        std::vector<double> score = predict_scores(probs, ps, po, target, cfg.beta);
        std::copy(score.begin(), score.end(), combined.data.begin() + i * c);

        Pair label{sample.state, sample.object};
        truth_seen[i] = ds.space.is_seen(label);
        if (target.contains(ds.space, label)) truth[i] = target.position(ds.space, label);

        auto top = rank_topk(score, 3);
        std::ostringstream line;
        line << "sample " << sample_ids[i] << " true (" << ds.space.states[sample.state] << ", "
             << ds.space.objects[sample.object] << ") top3:";
        for (std::size_t t : top)
            line << " (" << ds.space.states[target.comps[t].first] << ", "
                 << ds.space.objects[target.comps[t].second] << ")";
        report.top3.push_back(line.str());
    }

    std::vector<bool> comp_seen = target.seen;
    SweepResult sweep = calibration_sweep(combined, truth, truth_seen, comp_seen);
    report.mode = cfg.mode == WorldMode::closed ? "closed" : "open";
    report.best_seen = sweep.best_seen;
    report.best_unseen = sweep.best_unseen;
    report.auc = sweep.auc;
    report.best_hm = sweep.best_hm;
    report.curve = sweep.curve;
    return report;
}

}  // namespace eva
