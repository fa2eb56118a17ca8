#pragma once

#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "eva/alignment.hpp"
#include "eva/dataset.hpp"
#include "eva/labelspace.hpp"
#include "eva/model.hpp"

namespace eva {

enum class WorldMode { closed, open };

struct EvalConfig {
    WorldMode mode = WorldMode::closed;
    Phase phase = Phase::test;
    double beta = 0.5;                     // primitive score mixing at inference
    double feasibility_threshold = -1.0;   // open world; -1 retains everything
    T2IMode t2i_mode = T2IMode::renormalized;
};

// score(c) = p_c(c) + beta * (p_s(state(c)) + p_o(object(c)))
std::vector<double> predict_scores(const std::vector<double>& comp_probs,
                                   const std::vector<double>& state_scores,
                                   const std::vector<double>& object_scores,
                                   const TargetSpace& space, double beta);

// Top-k composition positions by score, ties toward the lower index.
std::vector<std::size_t> rank_topk(const std::vector<double>& scores, std::size_t k);

struct SweepPoint {
    double bias;  // +-infinity at the endpoints
    double seen_acc;
    double unseen_acc;
};

struct SweepResult {
    std::vector<SweepPoint> curve;
    double best_seen = 0.0;
    double best_unseen = 0.0;
    double auc = 0.0;
    double best_hm = 0.0;
};

constexpr std::size_t kNoTruth = static_cast<std::size_t>(-1);

// Adds each candidate bias to every unseen composition's score and measures
// top-1 accuracy on the seen-labelled and unseen-labelled sample subsets.
// Candidates are the per-sample seen-unseen score gaps (plus refinement
// midpoints and the two infinite endpoints), which realize every operating
// point of the step curve. truth[i] == kNoTruth marks a sample whose label
// fell outside the target space (never correct).
SweepResult calibration_sweep(const ag::Tensor& scores, const std::vector<std::size_t>& truth,
                              const std::vector<bool>& truth_seen,
                              const std::vector<bool>& comp_seen);

// Symmetric-similarity stand-in for open-world feasibility calibration:
// for c=(s,o), average of max cosine(t_o, t_o') over objects o' seen with s
// and max cosine(t_s, t_s') over states s' seen with o; retained when the
// average reaches the threshold. Seen compositions always survive.
TargetSpace feasibility_filter(const LabelSpace& space, const ag::Tensor& state_feats,
                               const ag::Tensor& object_feats, double threshold);

struct EvalReport {
    std::string mode;
    double best_seen = 0.0, best_unseen = 0.0, auc = 0.0, best_hm = 0.0;
    std::vector<SweepPoint> curve;
    std::vector<std::string> top3;  // one line per sample, unbiased scores
    ag::Tensor image_features;      // n x d_joint, for feature dumps
    std::string report_json() const;
    std::string curve_csv() const;
};

// Pure function of (model parameters, dataset, config).
EvalReport evaluate(const EvaModel& model, const Dataset& ds, const EvalConfig& cfg);

}  // namespace eva
