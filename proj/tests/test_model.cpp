#include <filesystem>

#include "doctest.h"
#include "mpcs/model.hpp"
#include "mpcs/rng.hpp"
#include "oracles.hpp"

using namespace mpcs;

namespace {

Tensor random_batch_images(int b, int s, Rng& rng) {
    Tensor x({b, 3, s, s});
    for (double& v : x.v) v = rng.uniform(-1.0, 1.0);
    return x;
}

}  // namespace

TEST_CASE("encoder forward is deterministic and finite") {
    Rng init(1);
    auto enc = make_encoder("toy8", init);
    CHECK(enc->feature_dim == 8);
    Tensor zero({1, 3, 8, 8});
    const Tensor h1 = enc->forward(zero, Mode::Eval);
    const Tensor h2 = enc->forward(zero, Mode::Eval);
    REQUIRE(h1.shape == std::vector<int>{1, 8});
    CHECK(h1.v == h2.v);
    for (double v : h1.v) CHECK(std::isfinite(v));
}

TEST_CASE("encoder is batch-order equivariant") {
    Rng init(2), rng(3);
    auto enc = make_encoder("toy64", init);
    const Tensor x = random_batch_images(3, 16, rng);
    const Tensor h = enc->forward(x, Mode::Eval);

    // swap rows 0 and 2
    Tensor xs = x;
    const size_t plane = static_cast<size_t>(3) * 16 * 16;
    for (size_t i = 0; i < plane; ++i) std::swap(xs.v[i], xs.v[2 * plane + i]);
    const Tensor hs = enc->forward(xs, Mode::Eval);
    for (int c = 0; c < 64; ++c) {
        CHECK(hs.at2(0, c) == h.at2(2, c));
        CHECK(hs.at2(2, c) == h.at2(0, c));
        CHECK(hs.at2(1, c) == h.at2(1, c));
    }
}

TEST_CASE("known-weight linear encoder matches hand arithmetic") {
    // single 1x1 conv (3 -> 2 channels) + GAP on a 2x2 image reduces to a
    // matrix product with the channel means
    Rng init(4);
    EncoderAdapter enc;
    enc.name = "manual";
    enc.feature_dim = 2;
    auto conv = std::make_unique<Conv2d>("conv1", 3, 2, 1, init);
    // W[out][in]: rows (1,2,3) and (0.5,-1,2); bias (0.25, -0.5)
    const double w[2][3] = {{1, 2, 3}, {0.5, -1, 2}};
    {
        auto params = conv->params();
        Tensor& wv = params[0]->value;
        for (int o = 0; o < 2; ++o)
            for (int i = 0; i < 3; ++i) wv.at4(o, i, 0, 0) = w[o][i];
        params[1]->value[0] = 0.25;
        params[1]->value[1] = -0.5;
    }
    enc.net.add(std::move(conv));
    enc.net.add(std::make_unique<GlobalAvgPool>("gap"));

    Tensor x({1, 3, 2, 2});
    const double planes[3][4] = {{0.1, 0.2, 0.3, 0.4}, {1, 1, 1, 1}, {-0.5, 0.5, -0.5, 0.5}};
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 4; ++i) x.v[static_cast<size_t>(c) * 4 + i] = planes[c][i];

    const Tensor h = enc.forward(x, Mode::Eval);
    const double mean[3] = {0.25, 1.0, 0.0};
    for (int o = 0; o < 2; ++o) {
        double expected = o == 0 ? 0.25 : -0.5;
        for (int i = 0; i < 3; ++i) expected += w[o][i] * mean[i];
        CHECK(h.at2(0, o) == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("projection head algebra") {
    Rng init(5);
    ProjectionHead head = ProjectionHead::build(3, {3, 3}, init, true);
    // set W1 = W2 = I, biases 0
    for (ParamTensor* p : head.net.params()) {
        p->value.fill(0.0);
        if (p->value.ndim() == 2)
            for (int i = 0; i < 3; ++i) p->value.at2(i, i) = 1.0;
    }
    Tensor neg({2, 3}, {-1, -2, -3, -0.5, -4, -1});
    const Tensor z_neg = head.forward(neg, Mode::Eval);
    for (double v : z_neg.v) CHECK(v == 0.0);

    Tensor pos({2, 3}, {1, 2, 3, 0.5, 4, 1});
    const Tensor z_pos = head.forward(pos, Mode::Eval);
    CHECK(z_pos.v == pos.v);
}

TEST_CASE("projection head matches dense-algebra oracle") {
    Rng init(6), rng(7);
    ProjectionHead head = ProjectionHead::build(4, {5, 3}, init, true);
    Tensor h({3, 4});
    for (double& v : h.v) v = rng.normal();
    const Tensor z = head.forward(h, Mode::Eval);

    auto params = head.net.params();  // [W1, b1, W2, b2]
    const Tensor &w1 = params[0]->value, &b1 = params[1]->value;
    const Tensor &w2 = params[2]->value, &b2 = params[3]->value;
    for (int r = 0; r < 3; ++r) {
        double hidden[5];
        for (int j = 0; j < 5; ++j) {
            double acc = b1[static_cast<size_t>(j)];
            for (int k = 0; k < 4; ++k) acc += w1.at2(j, k) * h.at2(r, k);
            hidden[j] = std::max(0.0, acc);
        }
        for (int o = 0; o < 3; ++o) {
            double acc = b2[static_cast<size_t>(o)];
            for (int j = 0; j < 5; ++j) acc += w2.at2(o, j) * hidden[j];
            CHECK(z.at2(r, o) == doctest::Approx(acc).epsilon(1e-9));
        }
    }
}

TEST_CASE("bias-free projection is 1-homogeneous on the positive region") {
    Rng init(8), rng(9);
    ProjectionHead head = ProjectionHead::build(4, {6, 3}, init, /*bias=*/false);
    Tensor h({2, 4});
    for (double& v : h.v) v = rng.uniform01() + 0.1;
    const Tensor z1 = head.forward(h, Mode::Eval);
    const double alpha = 2.75;
    Tensor h2 = h;
    for (double& v : h2.v) v *= alpha;
    const Tensor z2 = head.forward(h2, Mode::Eval);
    for (size_t i = 0; i < z1.v.size(); ++i)
        CHECK(z2.v[i] == doctest::Approx(alpha * z1.v[i]).epsilon(1e-10));
}

TEST_CASE("documented head widths per encoder") {
    CHECK(head_dims_for("resnet50") == std::vector<int>{1024, 128});
    CHECK(head_dims_for("efficientnet_b2") == std::vector<int>{2048, 1204, 128});
    CHECK(head_dims_for("toy8") == std::vector<int>{8, 4, 8});
    CHECK(head_dims_for("toy64") == std::vector<int>{64, 32, 64});
    CHECK_THROWS_AS(head_dims_for("vgg11"), UnknownEncoderError);
    Rng r(0);
    CHECK_THROWS_AS(make_encoder("vgg11", r), UnknownEncoderError);
    CHECK_THROWS_AS(make_encoder("resnet50", r), UnknownEncoderError);
}

TEST_CASE("encoder+head gradients match finite differences through a scalar loss") {
    Rng init(10), rng(11);
    auto enc = make_encoder("toy8", init);
    ProjectionHead head = default_projection_head(*enc, init);
    const Tensor x0 = random_batch_images(2, 8, rng);
    Tensor probe_dir({2, 8});
    for (double& v : probe_dir.v) v = rng.normal();

    auto loss_of_input = [&](const Tensor& x) {
        const Tensor h = enc->forward(x, Mode::Eval);
        const Tensor z = head.forward(h, Mode::Eval);
        double acc = 0.0;
        for (size_t i = 0; i < z.v.size(); ++i) acc += z.v[i] * probe_dir.v[i];
        return acc;
    };

    enc->net.zero_grad();
    head.net.zero_grad();
    const Tensor h = enc->forward(x0, Mode::Train);
    const Tensor z = head.forward(h, Mode::Train);
    (void)z;
    const Tensor gh = head.backward(probe_dir);
    const Tensor gx = enc->backward(gh);

    const Tensor fd = oracle::finite_difference(x0, loss_of_input, 1e-6);
    CHECK(oracle::max_relative_error(gx, fd) < 1e-4);

    // spot-check parameter gradients on sampled coordinates
    auto params = enc->net.params();
    for (ParamTensor* p : params) {
        for (int probe = 0; probe < 3; ++probe) {
            const size_t idx = rng.uniform_int(p->value.v.size());
            const double orig = p->value.v[idx];
            const double h_step = 1e-6;
            p->value.v[idx] = orig + h_step;
            const double fp = loss_of_input(x0);
            p->value.v[idx] = orig - h_step;
            const double fm = loss_of_input(x0);
            p->value.v[idx] = orig;
            const double fd_g = (fp - fm) / (2 * h_step);
            const double an_g = p->grad.v[idx];
            const double denom = std::max({1.0, std::abs(fd_g), std::abs(an_g)});
            CHECK(std::abs(fd_g - an_g) / denom < 1e-4);
        }
    }
}

TEST_CASE("dropout only acts in train mode and rescales") {
    Rng init(12), rng(13);
    ClassifierHead cls = ClassifierHead::build(6, 2, 0.5, init);
    Tensor h({4, 6});
    for (double& v : h.v) v = 1.0;
    const Tensor eval1 = cls.forward(h, Mode::Eval);
    const Tensor eval2 = cls.forward(h, Mode::Eval);
    CHECK(eval1.v == eval2.v);
    const Tensor train1 = cls.forward(h, Mode::Train, &rng);
    const Tensor train2 = cls.forward(h, Mode::Train, &rng);
    CHECK(train1.v != train2.v);  // masks differ
}

TEST_CASE("checkpoint round trip reproduces forward outputs bit-exactly") {
    Rng init(14), rng(15);
    auto enc = make_encoder("toy8", init);
    const Tensor x = random_batch_images(2, 8, rng);
    const Tensor before = enc->forward(x, Mode::Eval);

    Checkpoint ckpt;
    ckpt.manifest = {{"kind", "pretrain"},
                     {"encoder", {{"name", "toy8"}, {"feature_dim", 8}}},
                     {"config", {{"input_size", 8}}}};
    store_params(ckpt, "encoder", enc->net);
    const auto path = std::filesystem::temp_directory_path() / "mpcs_test_ckpt.mpcs";
    ckpt.save(path);

    const Checkpoint loaded = Checkpoint::load(path);
    CHECK(loaded.manifest.at("kind") == "pretrain");
    Rng init2(999);
    auto enc2 = make_encoder("toy8", init2);
    load_params(loaded, "encoder", enc2->net);
    const Tensor after = enc2->forward(x, Mode::Eval);
    CHECK(before.v == after.v);
    CHECK(params_hash(enc->net) == params_hash(enc2->net));

    CHECK_THROWS_AS(Checkpoint::load(path.string() + ".nope"), DataError);
}
