#include "doctest.h"

#include <set>

#include "test_util.hpp"
#include "uld/objectives.hpp"

using namespace uld;
using ag::Tape;

TEST_CASE("encode: 128x128x3 -> 32x32x256 with the paper widths") {
    GeneratorConfig gc;  // D = 256
    gc.enc_width = 8;    // narrow trunk, output width is what matters
    nn::ParamStore<double> ps;
    nn::RngEngine rng(1);
    Encoder<double> enc(ps, gc, rng);
    auto img = ag::leaf(testutil::random_images<double>(1, 128, 2));
    Tape<double> tape;
    auto f = enc.forward(tape, img);
    CHECK(f->val.shape() == std::vector<int>{1, 256, 32, 32});
    CHECK(f->val.all_finite());

    Tape<double> tape2;
    auto f2 = enc.forward(tape2, img);
    for (int64_t i = 0; i < f->val.size(); ++i) CHECK(f->val[i] == f2->val[i]);
}

TEST_CASE("encode: zero final-layer weights give a constant map") {
    nn::ParamStore<double> ps;
    nn::RngEngine rng(3);
    Encoder<double> enc(ps, testutil::micro_generator(), rng);
    enc.output_layer().w->val.fill(0.0);
    enc.output_layer().b->val[3] = 0.75;
    auto img = ag::leaf(testutil::random_images<double>(1, 16, 4));
    Tape<double> tape;
    auto f = enc.forward(tape, img);
    for (int h = 0; h < 4; ++h)
        for (int w = 0; w < 4; ++w) {
            CHECK(f->val.at(0, 3, h, w) == doctest::Approx(0.75).epsilon(1e-12));
            CHECK(f->val.at(0, 0, h, w) == doctest::Approx(0.0).epsilon(1e-12));
        }
}

TEST_CASE("generate: (features, heatmaps) -> full-resolution image") {
    nn::ParamStore<double> ps;
    nn::RngEngine rng(5);
    const auto gc = testutil::micro_generator();
    GeneratorNet<double> gen(ps, gc, /*K=*/2, rng);

    Tensor<double> feat({1, 8, 4, 4});
    Tensor<double> heat({1, 2, 4, 4});
    std::mt19937_64 r2(6);
    std::uniform_real_distribution<double> d(0, 1);
    for (int64_t i = 0; i < feat.size(); ++i) feat[i] = d(r2);
    for (int64_t i = 0; i < heat.size(); ++i) heat[i] = d(r2);

    Tape<double> tape;
    auto out = gen.forward(tape, ag::leaf(feat), ag::leaf(heat));
    CHECK(out->val.shape() == std::vector<int>{1, 3, 16, 16});
    CHECK(out->val.all_finite());

    Tape<double> t2;
    auto out2 = gen.forward(t2, ag::leaf(feat), ag::leaf(heat));
    for (int64_t i = 0; i < out->val.size(); ++i) CHECK(out->val[i] == out2->val[i]);

    // perturbing one heatmap channel changes the output
    Tensor<double> heat_p = heat;
    heat_p.at(0, 1, 2, 2) += 0.5;
    Tape<double> t3;
    auto out3 = gen.forward(t3, ag::leaf(feat), ag::leaf(heat_p));
    double max_diff = 0;
    for (int64_t i = 0; i < out->val.size(); ++i)
        max_diff = std::max(max_diff, std::abs(out3->val[i] - out->val[i]));
    CHECK(max_diff > 0.0);

    // spatial mismatch rejected
    Tensor<double> bad({1, 2, 8, 8});
    CHECK_THROWS_AS(gen.forward(tape, ag::leaf(feat), ag::leaf(bad)), InputError);
}

TEST_CASE("inter_intra_forward: shapes, weight sharing, gradient through both heatmap paths") {
    Model<double> m(testutil::micro_detector(), testutil::micro_generator(), 7);
    GenerationPipeline<double> pipe(m.detector, m.encoder, m.generator, true);

    auto x = ag::leaf(testutil::random_images<double>(2, 16, 8));
    auto xp = ag::leaf(testutil::random_images<double>(2, 16, 9));
    auto xa = ag::leaf(testutil::random_images<double>(2, 16, 10));

    Tape<double> tape;
    auto out = pipe.inter_intra_forward(tape, x, xp, xa);
    REQUIRE(out.image_aux.has_value());
    CHECK((*out.image_aux)->val.shape() == x->val.shape());
    CHECK(out.image_target->val.shape() == x->val.shape());

    // single parameter set: every name registered exactly once
    std::set<std::string> names;
    for (const auto& [name, v] : m.params.entries()) {
        CHECK(names.insert(name).second);
        (void)v;
    }

    // gradient reaches detector weights through Phi_H(x_aux) alone
    auto grad_norm_after = [&](bool aux_only) {
        m.params.zero_grad();
        Tape<double> t;
        auto o = pipe.inter_intra_forward(t, x, xp, xa);
        auto target = ag::leaf(Tensor<double>(x->val.shape()));
        auto loss = ag::mse(t, aux_only ? *o.image_aux : o.image_target, target);
        t.backward(loss);
        double s = 0;
        for (const auto& [name, v] : m.params.entries())
            if (name.rfind("detector.", 0) == 0 && v->has_grad)
                for (int64_t i = 0; i < v->grad.size(); ++i) s += v->grad[i] * v->grad[i];
        return std::sqrt(s);
    };
    CHECK(grad_norm_after(true) > 0.0);   // through Phi_H(x_aux)
    CHECK(grad_norm_after(false) > 0.0);  // through Phi_H(x') as well
}

TEST_CASE("cycle_forward: identity pair makes both directions bitwise equal") {
    Model<double> m(testutil::micro_detector(), testutil::micro_generator(), 11);
    GenerationPipeline<double> pipe(m.detector, m.encoder, m.generator, true);
    auto x = ag::leaf(testutil::random_images<double>(2, 16, 12));
    auto xa = ag::leaf(testutil::random_images<double>(2, 16, 13));

    Tape<double> tape;
    auto out = pipe.cycle_forward(tape, x, x, xa, true);
    REQUIRE(out.backward.has_value());
    // x' = x: forward and backward compute the same function
    for (int64_t i = 0; i < out.forward.image_target->val.size(); ++i)
        CHECK(out.forward.image_target->val[i] == out.backward->image_target->val[i]);

    // 4 generated images per triple when aux + cycle are on
    int generated = 0;
    generated += out.forward.image_aux.has_value() ? 1 : 0;
    generated += 1;  // forward target
    generated += out.backward->image_aux.has_value() ? 1 : 0;
    generated += 1;  // backward target
    CHECK(generated == 4);

    // disabling the cycle drops the backward path
    Tape<double> t2;
    auto fwd_only = pipe.cycle_forward(t2, x, x, xa, false);
    CHECK(!fwd_only.backward.has_value());
}

TEST_CASE("pipeline outputs are finite for random weights and [0,1] inputs") {
    Model<double> m(testutil::micro_detector(), testutil::micro_generator(), 17);
    GenerationPipeline<double> pipe(m.detector, m.encoder, m.generator, true);
    auto x = ag::leaf(testutil::random_images<double>(3, 16, 18));
    auto xp = ag::leaf(testutil::random_images<double>(3, 16, 19));
    auto xa = ag::leaf(testutil::random_images<double>(3, 16, 20));
    Tape<double> tape;
    auto out = pipe.cycle_forward(tape, x, xp, xa, true);
    CHECK(out.forward.image_target->val.all_finite());
    CHECK((*out.forward.image_aux)->val.all_finite());
    CHECK(out.backward->image_target->val.all_finite());
    CHECK(out.forward.det_source.landmarks->val.all_finite());
}

TEST_CASE("micro-model total-loss gradients match finite differences (rel 1e-3)") {
    Model<double> m(testutil::micro_detector(), testutil::micro_generator(), 21);
    GenerationPipeline<double> pipe(m.detector, m.encoder, m.generator, true);
    PerceptualNet<double> percep(testutil::random_fixed_percep());
    auto x = ag::leaf(testutil::random_images<double>(2, 16, 22));
    auto xp = ag::leaf(testutil::random_images<double>(2, 16, 23));
    auto xa = ag::leaf(testutil::random_images<double>(2, 16, 24));

    auto loss_value = [&]() {
        Tape<double> t;
        auto out = pipe.cycle_forward(t, x, xp, xa, true);
        return total_loss(t, out, x, xp, percep, LossMode::both).value->val[0];
    };
    m.params.zero_grad();
    Tape<double> tape;
    auto out = pipe.cycle_forward(tape, x, xp, xa, true);
    auto total = total_loss(tape, out, x, xp, percep, LossMode::both);
    tape.backward(total.value);

    std::mt19937_64 rng(25);
    const auto& entries = m.params.entries();
    const double h = 1e-5;
    for (int probe = 0; probe < 25; ++probe) {
        const auto& [name, v] = entries[rng() % entries.size()];
        if (v->val.size() == 0) continue;
        const int64_t i = static_cast<int64_t>(rng() % static_cast<uint64_t>(v->val.size()));
        const double keep = v->val[i];
        v->val[i] = keep + h;
        const double fp = loss_value();
        v->val[i] = keep - h;
        const double fm = loss_value();
        v->val[i] = keep;
        const double fd = (fp - fm) / (2 * h);
        const double an = v->has_grad ? v->grad[i] : 0.0;
        const double err = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
        INFO(name, "[", i, "] fd=", fd, " an=", an);
        CHECK(err < 1e-3);
    }
}
