#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "eva/labelspace.hpp"
#include "eva/model.hpp"
#include "eva/tape.hpp"
#include "eva/tensor.hpp"

namespace eva {

// State/object score handling. The literal mode follows the written formula
// p = tau * max p_c, which is not a distribution and lets the cross-entropy
// push tau to infinity; the default renormalizes max-pooled logits with a
// softmax and treats tau_s/tau_o as inverse temperatures.
enum class T2IMode { renormalized, literal };

struct AlignConfig {
    double alpha = 0.5;    // intra-model affinity weight
    double lambda1 = 0.5;  // state/object t2i losses
    double lambda2 = 0.1;  // variant i2t losses
    T2IMode t2i_mode = T2IMode::renormalized;
};

// Per-batch composition/state/object scores. Rows are samples.
struct ScoreTable {
    ag::Tensor comp_logits;    // n x |C|, cosine / tau
    ag::Tensor comp_probs;     // n x |C|
    ag::Tensor state_scores;   // n x |S|
    ag::Tensor object_scores;  // n x |O|
};

// ---- double path: scoring for evaluation and oracle checks -----------------

// Softmax over the target compositions of cosine(f, t_c)/tau for one image.
std::vector<double> composition_probs(const std::vector<double>& img_feat,
                                      const ag::Tensor& text_feats, double tau);

// Highest matching composition score per state/object (grouped over the
// target space), either renormalized over groups or literal.
std::vector<double> t2i_state_scores(const std::vector<double>& comp_logits,
                                     const std::vector<double>& comp_probs,
                                     const TargetSpace& space, double tau_s, T2IMode mode);
std::vector<double> t2i_object_scores(const std::vector<double>& comp_logits,
                                      const std::vector<double>& comp_probs,
                                      const TargetSpace& space, double tau_o, T2IMode mode);

ScoreTable make_score_table(const ag::Tensor& img_feats, const ag::Tensor& text_feats,
                            const TargetSpace& space, double tau, double tau_s, double tau_o,
                            T2IMode mode);

double loss_composition(const ScoreTable& scores, const std::vector<std::size_t>& comp_labels);
std::pair<double, double> loss_t2i(const ScoreTable& scores,
                                   const std::vector<std::size_t>& state_labels,
                                   const std::vector<std::size_t>& object_labels, T2IMode mode);

// Inter-model (variant vs primitive text) and intra-model (variant vs global
// image) affinities with their combined scores and argmax selections.
struct AffinityBundle {
    std::vector<double> a_s, a_o, a_v;  // inter / intra affinities
    std::vector<double> a_S, a_O;       // a_s + alpha a_v, a_o + alpha a_v
    double alpha = 0.0;
    std::size_t selected_state_idx = 0;
    std::size_t selected_object_idx = 0;
};

AffinityBundle variant_affinities(const ag::Tensor& variants, const std::vector<double>& t_s,
                                  const std::vector<double>& t_o, const std::vector<double>& f_c,
                                  double alpha);

std::pair<std::vector<double>, std::vector<double>> select_variants(const AffinityBundle& bundle,
                                                                    const ag::Tensor& variants);

// ---- tape path: training losses ---------------------------------------------

struct BatchEncodings {
    ag::Value img_feats;             // B x d_joint
    std::vector<ag::Value> variants; // per sample, n_var x d_joint
    ag::Value comp_feats;            // |C^s| x d_joint
    ag::Value state_feats;           // |S| x d_joint
    ag::Value object_feats;          // |O| x d_joint
    std::vector<std::size_t> comp_labels;   // positions in the training target
    std::vector<std::size_t> state_labels;
    std::vector<std::size_t> object_labels;
};

struct LossBundle {
    ag::Value total;
    ag::Value comp, state, object, state_v, object_v;
};

// Composition CE + t2i primitive CEs + i2t variant CEs, combined with the
// configured lambda weights. Target space must be the training space.
LossBundle build_losses(ag::Tape& tape, const EvaModel& model, const BatchEncodings& batch,
                        const TargetSpace& train_space, const AlignConfig& cfg);

}  // namespace eva
