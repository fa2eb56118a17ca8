#include "eva/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace eva {

using ag::Tape;
using ag::Tensor;
using ag::Value;

namespace {

constexpr double kAbsent = -1e30;  // group logit for states/objects with no composition

double dot_row(const Tensor& m, std::size_t r, const std::vector<double>& v) {
    double s = 0.0;
    for (std::size_t c = 0; c < m.dim(1); ++c) s += m.at(r, c) * v[c];
    return s;
}

std::vector<double> stable_softmax(const std::vector<double>& z) {
    double mx = *std::max_element(z.begin(), z.end());
    std::vector<double> out(z.size());
    double total = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        out[i] = std::exp(z[i] - mx);
        total += out[i];
    }
    for (double& v : out) v /= total;
    return out;
}

double log_sum_exp(const double* z, std::size_t n) {
    double mx = z[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, z[i]);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += std::exp(z[i] - mx);
    return mx + std::log(total);
}

std::vector<double> grouped_scores(const std::vector<double>& comp_logits,
                                   const std::vector<double>& comp_probs,
                                   const std::vector<std::size_t>& group_of,
                                   std::size_t n_groups, double temp, T2IMode mode) {
    if (comp_logits.size() != group_of.size())
        throw std::invalid_argument("t2i scores: composition table size mismatch");
    if (mode == T2IMode::literal) {
        // p(group) = temp * max over the group's compositions of p_c
        std::vector<double> out(n_groups, 0.0);
        for (std::size_t c = 0; c < comp_probs.size(); ++c)
            out[group_of[c]] = std::max(out[group_of[c]], comp_probs[c]);
        for (double& v : out) v *= temp;
        return out;
    }
    // group logit = temp * max over the group's compositions of the raw logit
    std::vector<double> z(n_groups, kAbsent);
    std::vector<bool> seen(n_groups, false);
    for (std::size_t c = 0; c < comp_logits.size(); ++c) {
        std::size_t g = group_of[c];
        if (!seen[g] || comp_logits[c] > z[g]) {
            z[g] = comp_logits[c];
            seen[g] = true;
        }
    }
    for (std::size_t g = 0; g < n_groups; ++g)
        if (seen[g]) z[g] *= temp;
    return stable_softmax(z);
}

}  // namespace

std::vector<double> composition_probs(const std::vector<double>& img_feat,
                                      const Tensor& text_feats, double tau) {
    if (text_feats.rank() != 2 || text_feats.dim(0) == 0)
        throw std::invalid_argument("composition_probs: empty target composition space");
    if (text_feats.dim(1) != img_feat.size())
        throw std::invalid_argument("composition_probs: feature width mismatch");
    if (tau <= 0.0) throw std::invalid_argument("composition_probs: tau must be positive");
    std::vector<double> logits(text_feats.dim(0));
    for (std::size_t c = 0; c < logits.size(); ++c)
        logits[c] = dot_row(text_feats, c, img_feat) / tau;
    return stable_softmax(logits);
}

std::vector<double> t2i_state_scores(const std::vector<double>& comp_logits,
                                     const std::vector<double>& comp_probs,
                                     const TargetSpace& space, double tau_s, T2IMode mode) {
    return grouped_scores(comp_logits, comp_probs, space.state_of, space.n_states, tau_s, mode);
}

std::vector<double> t2i_object_scores(const std::vector<double>& comp_logits,
                                      const std::vector<double>& comp_probs,
                                      const TargetSpace& space, double tau_o, T2IMode mode) {
    return grouped_scores(comp_logits, comp_probs, space.object_of, space.n_objects, tau_o, mode);
}

ScoreTable make_score_table(const Tensor& img_feats, const Tensor& text_feats,
                            const TargetSpace& space, double tau, double tau_s, double tau_o,
                            T2IMode mode) {
    if (text_feats.dim(0) != space.comps.size())
        throw std::invalid_argument("make_score_table: text features do not match target space");
    std::size_t n = img_feats.dim(0), c = text_feats.dim(0);
    ScoreTable table;
    table.comp_logits = Tensor::zeros({n, c});
    table.comp_probs = Tensor::zeros({n, c});
    table.state_scores = Tensor::zeros({n, space.n_states});
    table.object_scores = Tensor::zeros({n, space.n_objects});
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> feat(img_feats.data.begin() + i * img_feats.dim(1),
                                 img_feats.data.begin() + (i + 1) * img_feats.dim(1));
        std::vector<double> logits(c);
        for (std::size_t j = 0; j < c; ++j)
            logits[j] = dot_row(text_feats, j, feat) / tau;
        std::vector<double> probs = stable_softmax(logits);
        std::vector<double> ss = grouped_scores(logits, probs, space.state_of, space.n_states,
                                                tau_s, mode);
        std::vector<double> os = grouped_scores(logits, probs, space.object_of, space.n_objects,
                                                tau_o, mode);
        std::copy(logits.begin(), logits.end(), table.comp_logits.data.begin() + i * c);
        std::copy(probs.begin(), probs.end(), table.comp_probs.data.begin() + i * c);
        std::copy(ss.begin(), ss.end(), table.state_scores.data.begin() + i * space.n_states);
        std::copy(os.begin(), os.end(), table.object_scores.data.begin() + i * space.n_objects);
    }
    return table;
}

double loss_composition(const ScoreTable& scores, const std::vector<std::size_t>& comp_labels) {
    std::size_t n = scores.comp_logits.dim(0), c = scores.comp_logits.dim(1);
    if (comp_labels.size() != n)
        throw std::invalid_argument("loss_composition: one label per sample required");
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* z = scores.comp_logits.data.data() + i * c;
        total += log_sum_exp(z, c) - z[comp_labels[i]];
    }
    return total / static_cast<double>(n);
}

std::pair<double, double> loss_t2i(const ScoreTable& scores,
                                   const std::vector<std::size_t>& state_labels,
                                   const std::vector<std::size_t>& object_labels, T2IMode mode) {
    (void)mode;
    std::size_t n = scores.state_scores.dim(0);
    double ls = 0.0, lo = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double ps = scores.state_scores.at(i, state_labels[i]);
        double po = scores.object_scores.at(i, object_labels[i]);
        ls += -std::log(std::max(ps, 1e-300));
        lo += -std::log(std::max(po, 1e-300));
    }
    return {ls / static_cast<double>(n), lo / static_cast<double>(n)};
}

AffinityBundle variant_affinities(const Tensor& variants, const std::vector<double>& t_s,
                                  const std::vector<double>& t_o, const std::vector<double>& f_c,
                                  double alpha) {
    if (alpha < 0.0) throw std::invalid_argument("variant_affinities: alpha must be >= 0");
    std::size_t n = variants.dim(0);
    AffinityBundle b;
    b.alpha = alpha;
    b.a_s.resize(n);
    b.a_o.resize(n);
    b.a_v.resize(n);
    b.a_S.resize(n);
    b.a_O.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        b.a_s[i] = dot_row(variants, i, t_s);
        b.a_o[i] = dot_row(variants, i, t_o);
        b.a_v[i] = dot_row(variants, i, f_c);
        b.a_S[i] = b.a_s[i] + alpha * b.a_v[i];
        b.a_O[i] = b.a_o[i] + alpha * b.a_v[i];
    }
    b.selected_state_idx = ag::argmax(b.a_S);
    b.selected_object_idx = ag::argmax(b.a_O);
    return b;
}

std::pair<std::vector<double>, std::vector<double>> select_variants(const AffinityBundle& bundle,
                                                                    const Tensor& variants) {
    std::size_t d = variants.dim(1);
    auto row_of = [&](std::size_t r) {
        return std::vector<double>(variants.data.begin() + r * d,
                                   variants.data.begin() + (r + 1) * d);
    };
    return {row_of(bundle.selected_state_idx), row_of(bundle.selected_object_idx)};
}

// ---- tape path ---------------------------------------------------------------

namespace {

// mean CE at the given column per row, from raw logits
Value cross_entropy(Tape& tape, Value logits, const std::vector<std::size_t>& labels) {
    (void)tape;
    return scale(mean(take_per_row(log_softmax(logits, 1), labels)), -1.0);
}

}  // namespace

LossBundle build_losses(Tape& tape, const EvaModel& model, const BatchEncodings& batch,
                        const TargetSpace& train_space, const AlignConfig& cfg) {
    std::size_t n = batch.comp_labels.size();
    if (batch.img_feats.val().dim(0) != n || batch.variants.size() != n)
        throw std::invalid_argument("build_losses: batch pieces disagree on sample count");

    double inv_tau = 1.0 / model.tau();
    Value comp_logits = scale(matmul(batch.img_feats, transpose(batch.comp_feats)), inv_tau);

    LossBundle out;
    out.comp = cross_entropy(tape, comp_logits, batch.comp_labels);

    Value tau_s = model.tau_s(tape);
    Value tau_o = model.tau_o(tape);
    if (cfg.t2i_mode == T2IMode::renormalized) {
        Value zs = mul(segment_max(comp_logits, train_space.state_of, train_space.n_states,
                                   kAbsent),
                       tau_s);
        Value zo = mul(segment_max(comp_logits, train_space.object_of, train_space.n_objects,
                                   kAbsent),
                       tau_o);
        out.state = cross_entropy(tape, zs, batch.state_labels);
        out.object = cross_entropy(tape, zo, batch.object_labels);
    } else {
        Value probs = softmax(comp_logits, 1);
        Value ps = mul(segment_max(probs, train_space.state_of, train_space.n_states, 0.0),
                       tau_s);
        Value po = mul(segment_max(probs, train_space.object_of, train_space.n_objects, 0.0),
                       tau_o);
        out.state = scale(mean(vlog(take_per_row(ps, batch.state_labels))), -1.0);
        out.object = scale(mean(vlog(take_per_row(po, batch.object_labels))), -1.0);
    }

    // image-to-text variant alignment: hard-select one variant per primitive
    std::vector<Value> fs_rows, fo_rows;
    fs_rows.reserve(n);
    fo_rows.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Value v = batch.variants[i];
        Value a_s = matmul(v, row(batch.state_feats, batch.state_labels[i]));
        Value a_o = matmul(v, row(batch.object_feats, batch.object_labels[i]));
        Value a_v = matmul(v, row(batch.img_feats, i));
        Value a_S = add(a_s, scale(a_v, cfg.alpha));
        Value a_O = add(a_o, scale(a_v, cfg.alpha));
        fs_rows.push_back(row(v, ag::argmax(a_S.val())));
        fo_rows.push_back(row(v, ag::argmax(a_O.val())));
    }
    Value fs = stack_rows(fs_rows);
    Value fo = stack_rows(fo_rows);
    Value zs_v = scale(matmul(fs, transpose(batch.state_feats)), inv_tau);
    Value zo_v = scale(matmul(fo, transpose(batch.object_feats)), inv_tau);
    out.state_v = cross_entropy(tape, zs_v, batch.state_labels);
    out.object_v = cross_entropy(tape, zo_v, batch.object_labels);

    out.total = add(out.comp, add(scale(add(out.state, out.object), cfg.lambda1),
                                  scale(add(out.state_v, out.object_v), cfg.lambda2)));
    return out;
}

}  // namespace eva
