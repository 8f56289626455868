#include "doctest.h"

#include <filesystem>

#include "test_util.hpp"
#include "uld/objectives.hpp"

using namespace uld;
using ag::Tape;

TEST_CASE("reconstruction loss: identity zero, ones-vs-zeros one, single diff") {
    Tensor<double> a({1, 3, 4, 4});
    a.fill(0.37);
    Tape<double> tape;
    CHECK(reconstruction_loss(tape, ag::leaf(a), ag::leaf(a))->val[0] == 0.0);

    Tensor<double> ones({1, 3, 4, 4}), zeros({1, 3, 4, 4});
    ones.fill(1.0);
    CHECK(reconstruction_loss(tape, ag::leaf(ones), ag::leaf(zeros))->val[0] ==
          doctest::Approx(1.0).epsilon(1e-15));

    Tensor<double> b = a;
    b[5] += 0.5;
    const double n = static_cast<double>(a.size());
    CHECK(reconstruction_loss(tape, ag::leaf(a), ag::leaf(b))->val[0] ==
          doctest::Approx(0.25 / n).epsilon(1e-12));

    Tensor<double> wrong({1, 3, 5, 5});
    CHECK_THROWS_AS(reconstruction_loss(tape, ag::leaf(a), ag::leaf(wrong)), InputError);
}

TEST_CASE("perceptual loss: zero at identity, sum of per-tap MSEs, frozen backbone") {
    PerceptualNet<double> net(testutil::random_fixed_percep());
    auto a = ag::leaf(testutil::random_images<double>(1, 32, 31), true);
    auto b = ag::leaf(testutil::random_images<double>(1, 32, 32));

    Tape<double> tape;
    CHECK(perceptual_loss(tape, net, a, a)->val[0] == 0.0);

    // equals the sum over taps of feature MSEs
    Tape<double> t2;
    auto lp = perceptual_loss(t2, net, a, b);
    auto fa = net.forward(t2, a);
    auto fb = net.forward(t2, b);
    double expect = 0;
    for (size_t i = 0; i < fa.size(); ++i) expect += ag::mse(t2, fa[i], fb[i])->val[0];
    CHECK(lp->val[0] == doctest::Approx(expect).epsilon(1e-12));
    CHECK(lp->val[0] > 0.0);

    // gradients flow to the generated image, never into backbone weights
    Tape<double> t3;
    auto loss = perceptual_loss(t3, net, a, b);
    t3.backward(loss);
    CHECK(a->has_grad);
    double ga = 0;
    for (int64_t i = 0; i < a->grad.size(); ++i) ga += a->grad[i] * a->grad[i];
    CHECK(ga > 0.0);
    for (const auto& [name, v] : net.store().entries()) {
        CHECK(!v->requires_grad);
        CHECK(!v->has_grad);
        (void)name;
    }
}

TEST_CASE("random-fixed backbone is deterministic across instances") {
    PerceptualNet<double> n1(testutil::random_fixed_percep());
    PerceptualNet<double> n2(testutil::random_fixed_percep());
    auto a = ag::leaf(testutil::random_images<double>(1, 32, 33));
    Tape<double> tape;
    auto f1 = n1.forward(tape, a);
    auto f2 = n2.forward(tape, a);
    REQUIRE(f1.size() == f2.size());
    for (size_t i = 0; i < f1.size(); ++i)
        for (int64_t j = 0; j < f1[i]->val.size(); ++j) CHECK(f1[i]->val[j] == f2[i]->val[j]);
}

TEST_CASE("pretrained backbone: missing weights is a configuration error") {
    PerceptualConfig cfg;
    cfg.backbone = PerceptualBackbone::pretrained16;
    CHECK_THROWS_AS(PerceptualNet<double>{cfg}, ConfigError);
    cfg.weights_path = "/nonexistent/vgg.bin";
    CHECK_THROWS_AS(PerceptualNet<double>{cfg}, IoError);
}

TEST_CASE("pretrained16 architecture loads synthetic weights and taps the named layers") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "uld_fake_vgg16.bin").string();
    {
        TensorFile tf;
        std::mt19937_64 rng(34);
        std::normal_distribution<double> d(0, 0.05);
        auto add_conv = [&](const std::string& name, int out_ch, int in_ch) {
            Tensor<float> w({out_ch, in_ch, 3, 3});
            for (int64_t i = 0; i < w.size(); ++i) w[i] = static_cast<float>(d(rng));
            Tensor<float> b({out_ch});
            tf.set(name + ".w", w);
            tf.set(name + ".b", b);
        };
        add_conv("relu1_1", 64, 3);
        add_conv("relu1_2", 64, 64);
        add_conv("relu2_1", 128, 64);
        add_conv("relu2_2", 128, 128);
        add_conv("relu3_1", 256, 128);
        add_conv("relu3_2", 256, 256);
        add_conv("relu3_3", 256, 256);
        add_conv("relu4_1", 512, 256);
        add_conv("relu4_2", 512, 512);
        add_conv("relu4_3", 512, 512);
        tf.write(path);
    }
    PerceptualConfig cfg;
    cfg.backbone = PerceptualBackbone::pretrained16;
    cfg.weights_path = path;
    PerceptualNet<double> net(cfg);
    CHECK(net.taps() == std::vector<std::string>{"relu1_2", "relu2_2", "relu3_3", "relu4_3"});
    auto img = ag::leaf(testutil::random_images<double>(1, 32, 35));
    Tape<double> tape;
    auto taps = net.forward(tape, img);
    REQUIRE(taps.size() == 4);
    CHECK(taps[0]->val.shape() == std::vector<int>{1, 64, 32, 32});
    CHECK(taps[1]->val.shape() == std::vector<int>{1, 128, 16, 16});
    CHECK(taps[2]->val.shape() == std::vector<int>{1, 256, 8, 8});
    CHECK(taps[3]->val.shape() == std::vector<int>{1, 512, 4, 4});
    fs::remove(path);
}

TEST_CASE("unknown tap name rejected") {
    PerceptualConfig cfg;
    cfg.backbone = PerceptualBackbone::random_fixed;
    cfg.layers = {"stage1", "relu9_9"};
    CHECK_THROWS_AS(PerceptualNet<double>{cfg}, ConfigError);
}

TEST_CASE("total loss: perfect generations give zero; modes zero out components") {
    PerceptualNet<double> net(testutil::random_fixed_percep());
    auto x = ag::leaf(testutil::random_images<double>(1, 32, 36), true);
    auto xp = ag::leaf(testutil::random_images<double>(1, 32, 37));

    // fabricate outputs that exactly equal the targets
    CycleOutputs<double> perfect;
    perfect.forward.image_target = xp;
    perfect.backward.emplace();
    perfect.backward->image_target = x;
    Tape<double> tape;
    auto tl = total_loss(tape, perfect, x, xp, net, LossMode::both);
    CHECK(tl.report.recon_fwd == 0.0);
    CHECK(tl.report.recon_bwd == 0.0);
    CHECK(tl.report.percep_fwd == 0.0);
    CHECK(tl.report.percep_bwd == 0.0);
    CHECK(tl.value->val[0] == 0.0);

    // imperfect outputs: total equals the sum of components
    CycleOutputs<double> rough;
    rough.forward.image_target = ag::leaf(testutil::random_images<double>(1, 32, 38), true);
    rough.backward.emplace();
    rough.backward->image_target = ag::leaf(testutil::random_images<double>(1, 32, 39), true);
    Tape<double> t2;
    auto tb = total_loss(t2, rough, x, xp, net, LossMode::both);
    CHECK(std::abs(tb.report.total - (tb.report.recon_fwd + tb.report.recon_bwd +
                                      tb.report.percep_fwd + tb.report.percep_bwd)) < 1e-9);
    CHECK(std::abs(tb.value->val[0] - tb.report.total) < 1e-9);

    // recon_only: perceptual components reported as zero and out of the graph
    Tape<double> t3;
    auto tr = total_loss(t3, rough, x, xp, net, LossMode::recon_only);
    CHECK(tr.report.percep_fwd == 0.0);
    CHECK(tr.report.percep_bwd == 0.0);
    CHECK(tr.report.total == doctest::Approx(tr.report.recon_fwd + tr.report.recon_bwd));
    rough.forward.image_target->zero_grad();
    t3.backward(tr.value);
    // gradient exists (from recon) but equals the pure-recon gradient
    Tape<double> t4;
    auto pure = reconstruction_loss(t4, rough.forward.image_target, xp);
    Tensor<double> g = rough.forward.image_target->grad;
    rough.forward.image_target->zero_grad();
    t4.backward(pure);
    for (int64_t i = 0; i < g.size(); ++i)
        CHECK(g[i] == rough.forward.image_target->grad[i]);

    // perceptual_only
    Tape<double> t5;
    auto tp = total_loss(t5, rough, x, xp, net, LossMode::perceptual_only);
    CHECK(tp.report.recon_fwd == 0.0);
    CHECK(tp.report.recon_bwd == 0.0);
    CHECK(tp.report.total == doctest::Approx(tp.report.percep_fwd + tp.report.percep_bwd));
}

TEST_CASE("total loss gradient w.r.t. generated images matches finite differences") {
    PerceptualNet<double> net(testutil::random_fixed_percep());
    auto x = ag::leaf(testutil::random_images<double>(1, 16, 40));
    auto xp = ag::leaf(testutil::random_images<double>(1, 16, 41));
    auto gen_fwd = ag::leaf(testutil::random_images<double>(1, 16, 42), true);
    auto gen_bwd = ag::leaf(testutil::random_images<double>(1, 16, 43), true);

    auto value = [&]() {
        CycleOutputs<double> o;
        o.forward.image_target = gen_fwd;
        o.backward.emplace();
        o.backward->image_target = gen_bwd;
        Tape<double> t;
        return total_loss(t, o, x, xp, net, LossMode::both).value->val[0];
    };
    CycleOutputs<double> o;
    o.forward.image_target = gen_fwd;
    o.backward.emplace();
    o.backward->image_target = gen_bwd;
    gen_fwd->zero_grad();
    gen_bwd->zero_grad();
    Tape<double> tape;
    auto tl = total_loss(tape, o, x, xp, net, LossMode::both);
    tape.backward(tl.value);

    std::mt19937_64 rng(44);
    const double h = 1e-5;
    for (auto& leafv : {gen_fwd, gen_bwd}) {
        for (int probe = 0; probe < 10; ++probe) {
            const int64_t i =
                static_cast<int64_t>(rng() % static_cast<uint64_t>(leafv->val.size()));
            const double keep = leafv->val[i];
            leafv->val[i] = keep + h;
            const double fp = value();
            leafv->val[i] = keep - h;
            const double fm = value();
            leafv->val[i] = keep;
            const double fd = (fp - fm) / (2 * h);
            const double an = leafv->grad[i];
            CHECK(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}) < 1e-4);
        }
    }
}
