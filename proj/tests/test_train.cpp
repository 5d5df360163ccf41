#include <doctest.h>

#include "mitodet/rng.hpp"
#include "mitodet/targets.hpp"
#include "mitodet/train.hpp"

#include <cmath>
#include <vector>

using namespace mitodet;

namespace {

Volume3<float> filled(int w, int h, int d, float v) {
    Volume3<float> vol(w, h, d);
    vol.data.setConstant(v);
    return vol;
}

// A tiny dataset: one candidate whose target is a centered bump.
struct TinySet {
    std::vector<CandidateSequence<float>> cands;
    std::vector<Volume3<float>> targets;
};

TinySet tiny_dataset(int n, int w = 8, int h = 8, int d = 4) {
    TinySet set;
    Rng rng(77);
    for (int i = 0; i < n; ++i) {
        CandidateSequence<float> c;
        c.volume = Volume3<float>(w, h, d);
        for (Eigen::Index k = 0; k < c.volume.data.size(); ++k)
            c.volume.data[k] = static_cast<float>(uniform01(rng));
        c.meta.pad_mask.assign(static_cast<std::size_t>(d), 0);
        c.track_id = i;
        set.cands.push_back(std::move(c));
        set.targets.push_back(single_annotation_map<float>({w / 2.0, h / 2.0, d / 2.0},
                                                           {2.0, 2.0, 1.0}, w, h, d));
    }
    return set;
}

}  // namespace

TEST_CASE("mse_loss on matching volumes is zero") {
    const auto o = filled(4, 4, 2, 0.3f);
    const auto lg = mse_loss(o, o);
    CHECK(lg.loss == 0.0);
    CHECK(lg.grad.data.abs().maxCoeff() == 0.0f);
}

TEST_CASE("a constant 0.1 offset gives loss 0.01 and gradient 2*0.01") {
    const auto target = filled(4, 4, 2, 0.5f);
    const auto output = filled(4, 4, 2, 0.6f);
    const auto lg = mse_loss(output, target);
    CHECK(lg.loss == doctest::Approx(0.01).epsilon(1e-6));
    CHECK(lg.grad.at(2, 2, 1) == doctest::Approx(2.0 * 0.1 / 32.0).epsilon(1e-5));
}

TEST_CASE("padded slices carry no loss and no gradient") {
    auto output = filled(4, 4, 4, 0.0f);
    auto target = filled(4, 4, 4, 0.0f);
    output.slice(3).setConstant(1.0f);  // huge error, but padded
    target.slice(0).setConstant(0.5f);
    const std::vector<std::uint8_t> pad = {0, 0, 1, 1};

    const auto lg = mse_loss(output, target, &pad);
    CHECK(lg.loss == doctest::Approx(16 * 0.25 / 32.0));  // slices 0,1 only
    CHECK(lg.grad.slice(2).abs().maxCoeff() == 0.0f);
    CHECK(lg.grad.slice(3).abs().maxCoeff() == 0.0f);
    CHECK(lg.grad.slice(0).abs().maxCoeff() > 0.0f);
}

TEST_CASE("sum mode skips the voxel normalization") {
    const auto target = filled(2, 2, 2, 0.0f);
    const auto output = filled(2, 2, 2, 0.5f);
    const auto mean = mse_loss(output, target, nullptr, LossMode::PerVoxelMean);
    const auto sum = mse_loss(output, target, nullptr, LossMode::Sum);
    CHECK(mean.loss == doctest::Approx(0.25));
    CHECK(sum.loss == doctest::Approx(8 * 0.25));
    CHECK(sum.grad.at(0, 0, 0) == doctest::Approx(1.0));
}

TEST_CASE("mse_loss validates shapes") {
    const auto a = filled(4, 4, 2, 0.0f);
    const auto b = filled(4, 4, 3, 0.0f);
    CHECK_THROWS_AS(mse_loss(a, b), ShapeError);
    const std::vector<std::uint8_t> short_mask = {0};
    CHECK_THROWS_AS(mse_loss(a, a, &short_mask), ShapeError);
}

TEST_CASE("sgd step moves params along the negative gradient") {
    TrainConfig cfg;
    cfg.optimizer = Optimizer::Sgd;
    cfg.lr = 0.5;
    OptState<float> st;
    FlatArray<float> p(3), g(3);
    p << 1.0f, 2.0f, -1.0f;
    g << 0.0f, 2.0f, -1.0f;
    step(p, g, cfg, st);
    CHECK(p[0] == 1.0f);
    CHECK(p[1] == 1.0f);
    CHECK(p[2] == -0.5f);
    CHECK(st.step == 1);

    // lr = 1 with gradient equal to the params zeroes them
    cfg.lr = 1.0;
    FlatArray<float> q(2);
    q << 3.0f, -4.0f;
    FlatArray<float> gq = q;
    step(q, gq, cfg, st);
    CHECK(q.abs().maxCoeff() == 0.0f);
}

TEST_CASE("the first adam step has magnitude close to lr") {
    TrainConfig cfg;
    cfg.optimizer = Optimizer::Adam;
    cfg.lr = 0.001;
    OptState<double> st;
    FlatArray<double> p(2), g(2);
    p << 0.5, -0.5;
    g << 3.0, -0.004;
    const FlatArray<double> before = p;
    step(p, g, cfg, st);
    // bias-corrected m/sqrt(v) is sign(g) on the first step, up to eps
    CHECK(std::abs((before[0] - p[0]) - cfg.lr) < 1e-6);
    CHECK(std::abs((before[1] - p[1]) + cfg.lr) < 1e-6);
}

TEST_CASE("lr zero leaves parameters untouched and the loss curve flat") {
    const auto set = tiny_dataset(3);
    const Architecture arch = vnet_lite(2, 4);
    TrainConfig cfg;
    cfg.lr = 0.0;
    cfg.epochs = 3;
    cfg.seed = 9;
    const auto res = train(arch, set.cands, set.targets, cfg);
    REQUIRE(res.loss_curve.size() == 3);
    CHECK(res.loss_curve[0] == doctest::Approx(res.loss_curve[1]).epsilon(1e-12));
    CHECK(res.loss_curve[1] == doctest::Approx(res.loss_curve[2]).epsilon(1e-12));

    Rng rng(cfg.seed);
    const auto init = init_params<float>(arch, rng());
    CHECK((res.params == init).all());
}

TEST_CASE("training is deterministic and reduces the loss") {
    const auto set = tiny_dataset(4);
    const Architecture arch = vnet_lite(2, 4);
    TrainConfig cfg;
    cfg.lr = 0.005;
    cfg.epochs = 8;
    cfg.batch_size = 2;
    cfg.seed = 33;

    const auto a = train(arch, set.cands, set.targets, cfg);
    const auto b = train(arch, set.cands, set.targets, cfg);
    CHECK((a.params == b.params).all());
    CHECK(a.loss_curve == b.loss_curve);
    CHECK(a.loss_curve.back() < a.loss_curve.front());
    CHECK(a.steps == 8 * 2);  // 4 candidates in batches of 2

    cfg.threads = 4;
    const auto c = train(arch, set.cands, set.targets, cfg);
    CHECK((a.params == c.params).all());
    CHECK(a.loss_curve == c.loss_curve);
}

TEST_CASE("checkpoint callback fires at the configured interval") {
    const auto set = tiny_dataset(2);
    TrainConfig cfg;
    cfg.epochs = 6;
    cfg.checkpoint_interval = 2;
    cfg.lr = 0.001;
    std::vector<int> seen;
    const CheckpointFn<float> fn = [&](int epoch, const FlatArray<float>&, std::uint64_t) {
        seen.push_back(epoch);
    };
    train(vnet_lite(2, 4), set.cands, set.targets, cfg, fn);
    CHECK(seen == std::vector<int>{1, 3, 5});
}

TEST_CASE("training rejects inconsistent datasets") {
    auto set = tiny_dataset(2);
    TrainConfig cfg;
    const Architecture arch = vnet_lite(2, 4);
    CHECK_THROWS_AS(train(arch, std::vector<CandidateSequence<float>>{}, std::vector<Volume3<float>>{}, cfg), ConfigError);

    auto bad_targets = set.targets;
    bad_targets.pop_back();
    CHECK_THROWS_AS(train(arch, set.cands, bad_targets, cfg), ShapeError);

    auto wrong_shape = set.targets;
    wrong_shape[1] = Volume3<float>(4, 4, 4);
    CHECK_THROWS_AS(train(arch, set.cands, wrong_shape, cfg), ShapeError);
}

TEST_CASE("exploding parameters raise the divergence error") {
    auto set = tiny_dataset(2);
    TrainConfig cfg;
    cfg.optimizer = Optimizer::Sgd;
    cfg.lr = 1e18;  // guaranteed overflow within a few steps
    cfg.epochs = 50;
    CHECK_THROWS_AS(train(vnet_lite(2, 4), set.cands, set.targets, cfg), DivergedError);
}

TEST_CASE("train config validation") {
    TrainConfig cfg;
    cfg.lr = -1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.beta1 = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.lr = 0.0;  // explicitly allowed: a frozen-parameter dry run
    CHECK_NOTHROW(cfg.validate());
}
