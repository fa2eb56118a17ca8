#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "eva/alignment.hpp"
#include "eva/gradcheck.hpp"
#include "eva/rng.hpp"

using namespace eva;
using namespace eva::ag;

namespace {

Tensor unit_rows(std::size_t n, std::size_t d, Rng& rng) {
    Tensor t = Tensor::zeros({n, d});
    fill_normal(t, rng, 1.0);
    for (std::size_t r = 0; r < n; ++r) {
        double norm = 0.0;
        for (std::size_t c = 0; c < d; ++c) norm += t.at(r, c) * t.at(r, c);
        norm = std::sqrt(norm);
        for (std::size_t c = 0; c < d; ++c) t.at(r, c) /= norm;
    }
    return t;
}

std::vector<double> tensor_row(const Tensor& t, std::size_t r) {
    return std::vector<double>(t.data.begin() + r * t.dim(1), t.data.begin() + (r + 1) * t.dim(1));
}

LabelSpace toy_space(std::size_t n_states, std::size_t n_objects,
                     const std::vector<Pair>& train) {
    LabelSpace space;
    for (std::size_t s = 0; s < n_states; ++s) space.states.push_back("s" + std::to_string(s));
    for (std::size_t o = 0; o < n_objects; ++o) space.objects.push_back("o" + std::to_string(o));
    space.train_pairs = train;
    space.rebuild_index();
    return space;
}

}  // namespace

TEST_CASE("composition probabilities: symmetry, saturation, empty space") {
    // two compositions with equal cosine -> [0.5, 0.5]
    std::vector<double> f = {1.0, 0.0};
    Tensor text = Tensor::matrix(2, 2, {0.0, 1.0, 0.0, 1.0});
    auto p = composition_probs(f, text, 0.5);
    CHECK(p[0] == doctest::Approx(0.5));
    CHECK(p[1] == doctest::Approx(0.5));

    // cosine 1 vs cosine 0 at tau=0.01: the loser keeps ~exp(-100) mass
    Tensor sharp = Tensor::matrix(2, 2, {1.0, 0.0, 0.0, 1.0});
    auto q = composition_probs(f, sharp, 0.01);
    CHECK(q[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(q[1] < 1e-40);

    CHECK_THROWS_AS(composition_probs(f, Tensor::zeros({0, 2}), 0.01), std::invalid_argument);
}

TEST_CASE("adding a constant to every composition logit changes nothing") {
    Rng rng(41);
    ScoreTable a;
    a.comp_logits = Tensor::zeros({3, 5});
    fill_uniform(a.comp_logits, rng, -3.0, 3.0);
    ScoreTable b = a;
    for (double& v : b.comp_logits.data) v += 17.25;
    std::vector<std::size_t> labels = {2, 0, 4};
    CHECK(loss_composition(a, labels) == doctest::Approx(loss_composition(b, labels)).epsilon(1e-12));
}

TEST_CASE("composition loss hits its analytic values") {
    // perfect: the label's logit dominates by 500
    ScoreTable sharp;
    sharp.comp_logits = Tensor::zeros({1, 3});
    sharp.comp_logits.at(0, 1) = 500.0;
    CHECK(loss_composition(sharp, {1}) <= 1e-12);

    // uniform over 4 classes -> ln 4
    ScoreTable flat;
    flat.comp_logits = Tensor::zeros({2, 4});
    CHECK(loss_composition(flat, {0, 3}) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    // random fixture against a brute-force softmax loop
    Rng rng(42);
    ScoreTable r;
    r.comp_logits = Tensor::zeros({6, 7});
    fill_uniform(r.comp_logits, rng, -4.0, 4.0);
    std::vector<std::size_t> labels = {0, 6, 3, 2, 5, 1};
    double expect = 0.0;
    for (std::size_t i = 0; i < 6; ++i) {
        double total = 0.0;
        for (std::size_t c = 0; c < 7; ++c) total += std::exp(r.comp_logits.at(i, c));
        expect += -std::log(std::exp(r.comp_logits.at(i, labels[i])) / total);
    }
    expect /= 6.0;
    CHECK(loss_composition(r, labels) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("t2i scores match exhaustive max loops on random tables") {
    Rng rng(43);
    for (int trial = 0; trial < 50; ++trial) {
        std::uniform_int_distribution<std::size_t> dim(2, 6);
        std::size_t ns = dim(rng), no = dim(rng);
        // random sub-selection of the Cartesian product, at least one pair
        std::vector<Pair> pairs;
        std::bernoulli_distribution keep(0.6);
        for (std::size_t s = 0; s < ns; ++s)
            for (std::size_t o = 0; o < no; ++o)
                if (keep(rng)) pairs.emplace_back(s, o);
        if (pairs.empty()) pairs.emplace_back(0, 0);
        LabelSpace space = toy_space(ns, no, pairs);
        TargetSpace target = train_target(space);

        std::vector<double> logits(pairs.size()), probs(pairs.size());
        for (auto& v : logits) v = std::uniform_real_distribution<double>(-5.0, 5.0)(rng);
        double mx = *std::max_element(logits.begin(), logits.end());
        double z = 0.0;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            probs[i] = std::exp(logits[i] - mx);
            z += probs[i];
        }
        for (auto& v : probs) v /= z;
        double tau_s = 1.7;

        // literal: tau_s * max prob per state, zero for uncovered states
        auto lit = t2i_state_scores(logits, probs, target, tau_s, T2IMode::literal);
        for (std::size_t s = 0; s < ns; ++s) {
            double best = 0.0;
            for (std::size_t c = 0; c < pairs.size(); ++c)
                if (pairs[c].first == s) best = std::max(best, probs[c]);
            CHECK(lit[s] == tau_s * best);  // exact
        }

        // renormalized: softmax over tau_s * max logit per state
        auto ren = t2i_state_scores(logits, probs, target, tau_s, T2IMode::renormalized);
        std::vector<double> zexp(ns, -1e30);
        for (std::size_t c = 0; c < pairs.size(); ++c)
            zexp[pairs[c].first] = std::max(zexp[pairs[c].first], logits[c]);
        double zmax = -1e300, total = 0.0;
        for (std::size_t s = 0; s < ns; ++s) {
            if (zexp[s] != -1e30) zexp[s] *= tau_s;
            zmax = std::max(zmax, zexp[s]);
        }
        std::vector<double> e(ns);
        for (std::size_t s = 0; s < ns; ++s) {
            e[s] = std::exp(zexp[s] - zmax);
            total += e[s];
        }
        double rsum = 0.0;
        for (std::size_t s = 0; s < ns; ++s) {
            CHECK(std::abs(ren[s] - e[s] / total) <= 1e-15);
            rsum += ren[s];
            if (zexp[s] == -1e30) CHECK(ren[s] == 0.0);  // uncovered state
        }
        CHECK(std::abs(rsum - 1.0) <= 1e-8);

        // object side through the same oracle
        auto obj = t2i_object_scores(logits, probs, target, 0.9, T2IMode::literal);
        for (std::size_t o = 0; o < no; ++o) {
            double best = 0.0;
            for (std::size_t c = 0; c < pairs.size(); ++c)
                if (pairs[c].second == o) best = std::max(best, probs[c]);
            CHECK(obj[o] == 0.9 * best);
        }
    }
}

TEST_CASE("renormalized temperature rescaling keeps the argmax state") {
    Rng rng(44);
    LabelSpace space = toy_space(4, 3, {{0, 0}, {0, 1}, {1, 2}, {2, 0}, {3, 1}, {3, 2}});
    TargetSpace target = train_target(space);
    std::vector<double> logits(target.comps.size());
    for (auto& v : logits) v = std::uniform_real_distribution<double>(-2.0, 2.0)(rng);
    std::vector<double> probs(logits.size(), 0.0);
    auto a = t2i_state_scores(logits, probs, target, 0.4, T2IMode::renormalized);
    auto b = t2i_state_scores(logits, probs, target, 3.1, T2IMode::renormalized);
    CHECK(argmax(a) == argmax(b));
}

TEST_CASE("single-object space concentrates object probability") {
    LabelSpace space = toy_space(3, 1, {{0, 0}, {1, 0}, {2, 0}});
    TargetSpace target = train_target(space);
    std::vector<double> logits = {0.3, -1.0, 0.9};
    std::vector<double> probs = {0.3, 0.1, 0.6};
    auto ren = t2i_object_scores(logits, probs, target, 1.0, T2IMode::renormalized);
    CHECK(ren[0] == doctest::Approx(1.0));
}

TEST_CASE("t2i losses: perfect, uniform, and brute force") {
    LabelSpace space = toy_space(3, 4, {{0, 0}, {1, 1}, {2, 2}, {0, 3}, {1, 0}, {2, 1}});
    TargetSpace target = train_target(space);

    // all-equal logits -> uniform state/object distributions -> ln|S|, ln|O|
    Tensor img = Tensor::zeros({2, 3});
    img.at(0, 0) = 1.0;
    img.at(1, 0) = 1.0;
    ScoreTable table;
    table.comp_logits = Tensor::zeros({2, 6});
    table.comp_probs = Tensor::full({2, 6}, 1.0 / 6.0);
    table.state_scores = Tensor::full({2, 3}, 1.0 / 3.0);
    table.object_scores = Tensor::full({2, 4}, 1.0 / 4.0);
    auto [ls, lo] = loss_t2i(table, {0, 1}, {2, 3}, T2IMode::renormalized);
    CHECK(ls == doctest::Approx(std::log(3.0)).epsilon(1e-12));
    CHECK(lo == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    // perfect: label scores 1
    ScoreTable perfect = table;
    perfect.state_scores = Tensor::zeros({2, 3});
    perfect.object_scores = Tensor::zeros({2, 4});
    perfect.state_scores.at(0, 0) = 1.0;
    perfect.state_scores.at(1, 1) = 1.0;
    perfect.object_scores.at(0, 2) = 1.0;
    perfect.object_scores.at(1, 3) = 1.0;
    auto [pls, plo] = loss_t2i(perfect, {0, 1}, {2, 3}, T2IMode::renormalized);
    CHECK(pls == doctest::Approx(0.0));
    CHECK(plo == doctest::Approx(0.0));

    // random fixture vs hand loop
    Rng rng(45);
    ScoreTable r = table;
    fill_uniform(r.state_scores, rng, 0.05, 1.0);
    fill_uniform(r.object_scores, rng, 0.05, 1.0);
    auto [rls, rlo] = loss_t2i(r, {2, 0}, {1, 0}, T2IMode::renormalized);
    double els = (-std::log(r.state_scores.at(0, 2)) - std::log(r.state_scores.at(1, 0))) / 2.0;
    double elo = (-std::log(r.object_scores.at(0, 1)) - std::log(r.object_scores.at(1, 0))) / 2.0;
    CHECK(rls == doctest::Approx(els).epsilon(1e-12));
    CHECK(rlo == doctest::Approx(elo).epsilon(1e-12));
}

TEST_CASE("variant affinities match hand-computed dot products") {
    Rng rng(46);
    Tensor v = unit_rows(5, 8, rng);
    Tensor prim = unit_rows(3, 8, rng);
    auto t_s = tensor_row(prim, 0), t_o = tensor_row(prim, 1), f_c = tensor_row(prim, 2);

    AffinityBundle b = variant_affinities(v, t_s, t_o, f_c, 0.5);
    for (std::size_t i = 0; i < 5; ++i) {
        double as = 0.0, ao = 0.0, av = 0.0;
        for (std::size_t c = 0; c < 8; ++c) {
            as += v.at(i, c) * t_s[c];
            ao += v.at(i, c) * t_o[c];
            av += v.at(i, c) * f_c[c];
        }
        CHECK(b.a_s[i] == doctest::Approx(as).epsilon(1e-14));
        CHECK(b.a_o[i] == doctest::Approx(ao).epsilon(1e-14));
        CHECK(b.a_v[i] == doctest::Approx(av).epsilon(1e-14));
        CHECK(b.a_S[i] == doctest::Approx(b.a_s[i] + 0.5 * b.a_v[i]).epsilon(1e-14));
        CHECK(b.a_O[i] == doctest::Approx(b.a_o[i] + 0.5 * b.a_v[i]).epsilon(1e-14));
    }

    // alpha 0 -> pure inter-model affinity
    AffinityBundle b0 = variant_affinities(v, t_s, t_o, f_c, 0.0);
    for (std::size_t i = 0; i < 5; ++i) CHECK(b0.a_S[i] == b0.a_s[i]);

    // a variant equal to t_s pins its state affinity at the unit maximum
    Tensor v2 = v;
    for (std::size_t c = 0; c < 8; ++c) v2.at(2, c) = t_s[c];
    AffinityBundle b2 = variant_affinities(v2, t_s, t_o, f_c, 0.0);
    CHECK(b2.a_s[2] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(b2.selected_state_idx == 2);
}

TEST_CASE("select_variants follows the argmax with first-index ties") {
    Tensor v = Tensor::matrix(3, 2, {1, 0, 0, 1, 0.5, 0.5});
    AffinityBundle b;
    b.a_S = {0.1, 0.9, 0.3};
    b.a_O = {0.4, 0.4, 0.4};  // tie -> row 0
    b.selected_state_idx = argmax(b.a_S);
    b.selected_object_idx = argmax(b.a_O);
    auto [fs, fo] = select_variants(b, v);
    CHECK(fs == std::vector<double>{0, 1});
    CHECK(fo == std::vector<double>{1, 0});

    // positive rescaling never changes the selection
    Rng rng(47);
    Tensor vv = unit_rows(4, 6, rng);
    Tensor prim = unit_rows(3, 6, rng);
    auto t_s = tensor_row(prim, 0), t_o = tensor_row(prim, 1), f_c = tensor_row(prim, 2);
    AffinityBundle base = variant_affinities(vv, t_s, t_o, f_c, 0.5);
    std::vector<double> t_s2 = t_s, t_o2 = t_o, f_c2 = f_c;
    for (auto& x : t_s2) x *= 3.5;
    for (auto& x : t_o2) x *= 3.5;
    for (auto& x : f_c2) x *= 3.5;
    AffinityBundle scaled = variant_affinities(vv, t_s2, t_o2, f_c2, 0.5);
    CHECK(scaled.selected_state_idx == base.selected_state_idx);
    CHECK(scaled.selected_object_idx == base.selected_object_idx);
}

TEST_CASE("tape losses agree with the double-path scoring") {
    Rng rng(48);
    ModelConfig mc;
    mc.enc.depth = 1;
    mc.enc.d = 8;
    mc.enc.heads = 2;
    mc.enc.d_joint = 4;
    mc.enc.seq_len_image = 3;
    mc.enc.prefix_len = 1;
    mc.enc.d_in = 2;
    mc.enc.moe.n_routed = 3;
    mc.enc.moe.k = 1;
    mc.enc.moe.rank = 2;
    mc.seed = 51;
    EvaModel model(mc, 3, 4);

    LabelSpace space = toy_space(3, 4, {{0, 0}, {1, 1}, {2, 2}, {0, 3}, {1, 0}, {2, 1}});
    TargetSpace target = train_target(space);

    const std::size_t B = 5, n_var = 4, dj = 4;
    Tensor img = unit_rows(B, dj, rng);
    Tensor comp = unit_rows(target.comps.size(), dj, rng);
    Tensor states = unit_rows(3, dj, rng);
    Tensor objects = unit_rows(4, dj, rng);
    std::vector<Tensor> variants;
    for (std::size_t i = 0; i < B; ++i) variants.push_back(unit_rows(n_var, dj, rng));

    std::vector<std::size_t> comp_labels = {0, 2, 4, 1, 5};
    std::vector<std::size_t> s_labels, o_labels;
    for (std::size_t l : comp_labels) {
        s_labels.push_back(target.comps[l].first);
        o_labels.push_back(target.comps[l].second);
    }

    AlignConfig cfg;
    Tape tape;
    BatchEncodings enc;
    enc.img_feats = tape.constant(img);
    for (auto& v : variants) enc.variants.push_back(tape.constant(v));
    enc.comp_feats = tape.constant(comp);
    enc.state_feats = tape.constant(states);
    enc.object_feats = tape.constant(objects);
    enc.comp_labels = comp_labels;
    enc.state_labels = s_labels;
    enc.object_labels = o_labels;
    LossBundle losses = build_losses(tape, model, enc, target, cfg);

    // double path: tau_s = tau_o = softplus(raw) = 1 at init
    ScoreTable table = make_score_table(img, comp, target, model.tau(), 1.0, 1.0,
                                        T2IMode::renormalized);
    CHECK(losses.comp.scalar() ==
          doctest::Approx(loss_composition(table, comp_labels)).epsilon(1e-12));
    auto [ls, lo] = loss_t2i(table, s_labels, o_labels, T2IMode::renormalized);
    CHECK(losses.state.scalar() == doctest::Approx(ls).epsilon(1e-12));
    CHECK(losses.object.scalar() == doctest::Approx(lo).epsilon(1e-12));

    // i2t by hand: select variants, softmax over primitives at tau
    double els = 0.0, elo = 0.0;
    for (std::size_t i = 0; i < B; ++i) {
        AffinityBundle b = variant_affinities(variants[i], tensor_row(states, s_labels[i]),
                                              tensor_row(objects, o_labels[i]),
                                              tensor_row(img, i), cfg.alpha);
        auto [fs, fo] = select_variants(b, variants[i]);
        auto ps = composition_probs(fs, states, model.tau());
        auto po = composition_probs(fo, objects, model.tau());
        els += -std::log(ps[s_labels[i]]);
        elo += -std::log(po[o_labels[i]]);
    }
    CHECK(losses.state_v.scalar() == doctest::Approx(els / B).epsilon(1e-9));
    CHECK(losses.object_v.scalar() == doctest::Approx(elo / B).epsilon(1e-9));

    // total is the lambda-weighted sum of its logged components
    double total = losses.comp.scalar() + cfg.lambda1 * (losses.state.scalar() +
                   losses.object.scalar()) +
                   cfg.lambda2 * (losses.state_v.scalar() + losses.object_v.scalar());
    CHECK(std::abs(losses.total.scalar() - total) <= 1e-12);
}

TEST_CASE("temperatures stay positive for any raw parameter") {
    ModelConfig mc;
    mc.enc.depth = 1;
    mc.enc.d = 8;
    mc.enc.heads = 2;
    mc.enc.d_joint = 4;
    mc.enc.seq_len_image = 3;
    mc.enc.prefix_len = 1;
    mc.enc.d_in = 2;
    mc.enc.moe.n_routed = 2;
    mc.enc.moe.k = 1;
    mc.enc.moe.rank = 2;
    EvaModel model(mc, 2, 2);
    auto& raw = model.params().at(model.params().id_of("align.tau_s_raw")).value;

    for (double x : {-50.0, -5.0, 0.0, 3.0, 80.0}) {
        raw.data[0] = x;
        Tape tape;
        CHECK(model.tau_s(tape).scalar() > 0.0);
    }
}

TEST_CASE("the composite alignment loss passes a finite-difference check") {
    ModelConfig mc;
    mc.enc.depth = 2;
    mc.enc.d = 8;
    mc.enc.heads = 2;
    mc.enc.d_joint = 4;
    mc.enc.seq_len_image = 5;
    mc.enc.prefix_len = 2;
    mc.enc.d_in = 3;
    mc.enc.moe.n_routed = 4;
    mc.enc.moe.k = 2;
    mc.enc.moe.rank = 2;
    mc.seed = 52;
    EvaModel model(mc, 3, 3);
    {
        Rng rng(53);
        for (auto& p : model.params())
            if (p.name.find(".moe.") != std::string::npos && p.name.ends_with(".B"))
                fill_uniform(p.value, rng, -0.3, 0.3);
    }

    LabelSpace space = toy_space(3, 3, {{0, 0}, {1, 1}, {2, 2}, {0, 1}});
    TargetSpace target = train_target(space);

    Rng ir(54);
    std::vector<Tensor> images;
    for (int i = 0; i < 2; ++i) {
        Tensor img = Tensor::zeros({5, 3});
        fill_uniform(img, ir, -1.0, 1.0);
        images.push_back(std::move(img));
    }
    std::vector<std::size_t> comp_labels = {0, 2};

    AlignConfig cfg;
    auto build = [&](Tape& tape) {
        BatchEncodings enc;
        std::vector<Value> feats;
        for (const Tensor& img : images) {
            EncoderOutput out = model.image().encode(tape, img);
            feats.push_back(out.global);
            enc.variants.push_back(out.variants);
        }
        enc.img_feats = stack_rows(feats);
        enc.comp_feats = model.comp_features(tape, target.comps);
        enc.state_feats = model.state_features(tape);
        enc.object_feats = model.object_features(tape);
        enc.comp_labels = comp_labels;
        for (std::size_t l : comp_labels) {
            enc.state_labels.push_back(target.comps[l].first);
            enc.object_labels.push_back(target.comps[l].second);
        }
        return build_losses(tape, model, enc, target, cfg).total;
    };
    FiniteDiffReport rep = finite_diff_check(model.params(), build, 1e-5, 1e-4);
    INFO("worst ", rep.worst_param, " err ", rep.max_rel_err);
    CHECK(rep.pass);
}
