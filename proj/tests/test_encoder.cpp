#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "eva/gradcheck.hpp"
#include "eva/model.hpp"
#include "eva/rng.hpp"

using namespace eva;
using namespace eva::ag;

namespace {

ModelConfig micro_config(bool adapters = true) {
    ModelConfig cfg;
    cfg.enc.depth = 2;
    cfg.enc.d = 8;
    cfg.enc.heads = 2;
    cfg.enc.d_joint = 4;
    cfg.enc.seq_len_image = 5;
    cfg.enc.prefix_len = 2;
    cfg.enc.d_in = 3;
    cfg.enc.ffn_mult = 2;
    cfg.enc.moe.n_routed = 4;
    cfg.enc.moe.n_shared = 1;
    cfg.enc.moe.k = 2;
    cfg.enc.moe.rank = 2;
    cfg.enc.adapters_enabled = adapters;
    cfg.seed = 21;
    return cfg;
}

Tensor random_image(const ModelConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    Tensor t = Tensor::zeros({cfg.enc.seq_len_image, cfg.enc.d_in});
    fill_uniform(t, rng, -1.0, 1.0);
    for (std::size_t c = 0; c < cfg.enc.d_in; ++c) t.at(0, c) = 0.0;  // CLS slot
    return t;
}

void randomize_lora_b(ParameterStore& store, std::uint64_t seed) {
    Rng rng(seed);
    for (auto& p : store)
        if (p.name.find(".moe.") != std::string::npos && p.name.ends_with(".B"))
            fill_uniform(p.value, rng, -0.3, 0.3);
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

TEST_CASE("zero-B adapters reproduce the adapter-free encoders exactly") {
    ModelConfig with = micro_config(true);
    ModelConfig without = micro_config(false);
    EvaModel full(with, 3, 4);
    EvaModel frozen(without, 3, 4);

    Tensor img = random_image(with, 5);
    Tape t1, t2;
    EncoderOutput a = full.image().encode(t1, img);
    EncoderOutput b = frozen.image().encode(t2, img);
    REQUIRE(a.global.size() == b.global.size());
    for (std::size_t i = 0; i < a.global.size(); ++i)
        CHECK(std::abs(a.global.val().data[i] - b.global.val().data[i]) <= 1e-12);

    // every variant row matches the adapter-free feature as well
    for (std::size_t r = 0; r < a.variants.val().dim(0); ++r)
        for (std::size_t c = 0; c < a.variants.val().dim(1); ++c)
            CHECK(std::abs(a.variants.val().at(r, c) - b.global.val().data[c]) <= 1e-12);

    Tape t3, t4;
    Value ta = full.text().encode(t3, full.prompts().comp_prompt(t3, 1, 2));
    Value tb = frozen.text().encode(t4, frozen.prompts().comp_prompt(t4, 1, 2));
    for (std::size_t i = 0; i < ta.size(); ++i)
        CHECK(std::abs(ta.val().data[i] - tb.val().data[i]) <= 1e-12);
}

TEST_CASE("encoding is deterministic and unit-norm") {
    ModelConfig cfg = micro_config();
    EvaModel model(cfg, 3, 4);
    randomize_lora_b(model.params(), 31);

    Tensor img = random_image(cfg, 6);
    Tape t1, t2;
    EncoderOutput a = model.image().encode(t1, img);
    EncoderOutput b = model.image().encode(t2, img);
    CHECK(a.global.val().data == b.global.val().data);
    CHECK(a.variants.val().data == b.variants.val().data);

    double n2 = 0.0;
    for (double v : a.global.val().data) n2 += v * v;
    CHECK(std::abs(std::sqrt(n2) - 1.0) <= 1e-9);

    REQUIRE(a.variants.val().dim(0) == 5);  // shared + 4 routed
    REQUIRE(a.variants.val().dim(1) == cfg.enc.d_joint);
    for (std::size_t r = 0; r < 5; ++r) {
        double rn = 0.0;
        for (std::size_t c = 0; c < cfg.enc.d_joint; ++c)
            rn += a.variants.val().at(r, c) * a.variants.val().at(r, c);
        CHECK(std::abs(std::sqrt(rn) - 1.0) <= 1e-9);
    }
}

TEST_CASE("image encoder rejects wrong sequence length") {
    ModelConfig cfg = micro_config();
    EvaModel model(cfg, 3, 4);
    Tensor bad = Tensor::zeros({cfg.enc.seq_len_image + 1, cfg.enc.d_in});
    Tape tape;
    CHECK_THROWS_AS(model.image().encode(tape, bad), std::invalid_argument);
}

TEST_CASE("text features are stable per composition and differ across them") {
    ModelConfig cfg = micro_config();
    EvaModel model(cfg, 3, 4);
    randomize_lora_b(model.params(), 32);

    Tape t1, t2, t3;
    Value a = model.text().encode(t1, model.prompts().comp_prompt(t1, 0, 1));
    Value b = model.text().encode(t2, model.prompts().comp_prompt(t2, 0, 1));
    CHECK(a.val().data == b.val().data);

    Value c = model.text().encode(t3, model.prompts().comp_prompt(t3, 0, 2));
    bool identical = true;
    for (std::size_t i = 0; i < a.size(); ++i)
        identical = identical && a.val().data[i] == c.val().data[i];
    CHECK(!identical);

    CHECK_THROWS_AS(model.prompts().comp_prompt(t3, 3, 0), std::invalid_argument);
    CHECK_THROWS_AS(model.prompts().state_prompt(t3, 9), std::invalid_argument);
}

TEST_CASE("identical expert parameters collapse all variants") {
    ModelConfig cfg = micro_config();
    EvaModel model(cfg, 3, 4);
    ParameterStore& store = model.params();
    randomize_lora_b(store, 33);
    // copy the last image layer's shared expert into every routed expert
    const Tensor a0 = store.at(store.id_of("img.l1.moe.shared0.A")).value;
    const Tensor b0 = store.at(store.id_of("img.l1.moe.shared0.B")).value;
    for (int e = 0; e < 4; ++e) {
        store.at(store.id_of("img.l1.moe.routed" + std::to_string(e) + ".A")).value = a0;
        store.at(store.id_of("img.l1.moe.routed" + std::to_string(e) + ".B")).value = b0;
    }

    Tape tape;
    EncoderOutput out = model.image().encode(tape, random_image(cfg, 7));
    for (std::size_t r = 1; r < out.variants.val().dim(0); ++r)
        for (std::size_t c = 0; c < out.variants.val().dim(1); ++c)
            CHECK(out.variants.val().at(r, c) ==
                  doctest::Approx(out.variants.val().at(0, c)).epsilon(1e-14));
}

TEST_CASE("randomly initialized experts give pairwise-distinct variants") {
    ModelConfig cfg = micro_config();
    EvaModel model(cfg, 3, 4);
    randomize_lora_b(model.params(), 34);

    Tape tape;
    EncoderOutput out = model.image().encode(tape, random_image(cfg, 8));
    std::size_t n = out.variants.val().dim(0);
    std::size_t dj = out.variants.val().dim(1);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            std::vector<double> ri(out.variants.val().data.begin() + i * dj,
                                   out.variants.val().data.begin() + (i + 1) * dj);
            std::vector<double> rj(out.variants.val().data.begin() + j * dj,
                                   out.variants.val().data.begin() + (j + 1) * dj);
            CHECK(cosine(ri, rj) < 1.0 - 1e-9);
        }
}

TEST_CASE("all trainable encoder parameters pass a finite-difference check") {
    ModelConfig cfg = micro_config();
    EvaModel model(cfg, 3, 4);
    randomize_lora_b(model.params(), 35);
    Tensor img = random_image(cfg, 9);

    auto build = [&](Tape& tape) {
        Rng wrng(71);
        EncoderOutput out = model.image().encode(tape, img);
        Value txt = model.text().encode(tape, model.prompts().comp_prompt(tape, 1, 3));

        Tensor wg = Tensor::zeros(out.global.shape());
        fill_uniform(wg, wrng, -1.0, 1.0);
        Tensor wv = Tensor::zeros(out.variants.shape());
        fill_uniform(wv, wrng, -1.0, 1.0);
        Tensor wt = Tensor::zeros(txt.shape());
        fill_uniform(wt, wrng, -1.0, 1.0);
        return add(sum(mul(out.global, tape.constant(wg))),
                   add(sum(mul(out.variants, tape.constant(wv))),
                       sum(mul(txt, tape.constant(wt)))));
    };
    FiniteDiffReport rep = finite_diff_check(model.params(), build, 1e-5, 1e-4);
    INFO("worst ", rep.worst_param, " err ", rep.max_rel_err);
    CHECK(rep.pass);
}
