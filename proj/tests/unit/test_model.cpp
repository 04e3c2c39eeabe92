#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "purge/error.hpp"
#include "purge/model.hpp"
#include "purge/rng.hpp"

using namespace purge;

namespace {

ModelState random_state(const ModelArch& arch, Rng& rng, double scale) {
    ModelState s{arch, std::vector<double>(arch.param_count()), 0};
    for (auto& p : s.params) p = rng.uniform(-scale, scale);
    return s;
}

std::vector<double> random_vec(std::size_t n, Rng& rng, double lo = -2, double hi = 2) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

std::vector<double> random_dist(std::size_t n, Rng& rng) {
    auto v = random_vec(n, rng, 0.01, 1.0);
    double s = 0;
    for (double x : v) s += x;
    for (auto& x : v) x /= s;
    return v;
}

const ModelArch kLinear{ModelKind::softmax_linear, 2, 3, 0};
const ModelArch kHidden{ModelKind::one_hidden_layer, 3, 4, 5};

}  // namespace

TEST_CASE("parameter counts") {
    CHECK(kLinear.param_count() == 9);
    CHECK(kHidden.param_count() == 3 * 5 + 5 + 5 * 4 + 4);
    CHECK_THROWS_AS((ModelArch{ModelKind::one_hidden_layer, 2, 2, 0}.validate()), InvalidArgument);
    CHECK_THROWS_AS((ModelArch{ModelKind::softmax_linear, 0, 2, 0}.validate()), InvalidArgument);
}

TEST_CASE("init_model is seeded and bounded") {
    const auto a = init_model(kHidden, 1);
    CHECK(a == init_model(kHidden, 1));
    CHECK(a.params.size() == kHidden.param_count());
    for (double p : a.params) CHECK(std::abs(p) <= 0.05);
    CHECK(a.params != init_model(kHidden, 2).params);
}

TEST_CASE("zero weights predict the uniform distribution") {
    ModelState s{kLinear, std::vector<double>(9, 0.0), 0};
    for (double p : predict(s, std::vector<double>{1.0, -2.0})) CHECK(p == doctest::Approx(1.0 / 3).epsilon(1e-15));
}

TEST_CASE("logits match the matrix-multiply oracle") {
    Rng rng(4);
    for (const auto& arch : {kLinear, kHidden}) {
        for (int i = 0; i < 50; ++i) {
            const auto s = random_state(arch, rng, 1.0);
            const auto x = random_vec(arch.feature_dim, rng);
            const auto got = logits(s, x);
            const auto want = oracle::logits(s, x);
            for (std::size_t c = 0; c < got.size(); ++c) CHECK(std::abs(got[c] - want[c]) <= 1e-12);
        }
    }
}

TEST_CASE("predictions are normalised") {
    Rng rng(5);
    for (int i = 0; i < 1000; ++i) {
        const auto& arch = i % 2 ? kLinear : kHidden;
        const auto s = random_state(arch, rng, 3.0);
        const auto p = predict(s, random_vec(arch.feature_dim, rng, -5, 5), rng.uniform(0.5, 3.0));
        double sum = 0;
        for (double v : p) {
            CHECK(v >= 0.0);
            sum += v;
        }
        CHECK(std::abs(sum - 1.0) <= 1e-9);
    }
    CHECK_THROWS_AS(predict(init_model(kLinear, 0), std::vector<double>{1.0}), DimensionError);
}

TEST_CASE("distill_loss examples") {
    const std::vector<double> onehot{0, 1, 0};
    CHECK(distill_loss(onehot, onehot, 1, 0.0) <= 1e-9);
    const std::vector<double> uni(4, 0.25);
    CHECK(distill_loss(uni, uni, 0, 0.0) == doctest::Approx(std::log(4.0)).epsilon(1e-14));
    Rng rng(6);
    for (int i = 0; i < 20; ++i) {
        const auto p = random_dist(5, rng), y = random_dist(5, rng);
        const double alpha = rng.uniform();
        CHECK(std::abs(distill_loss(p, y, 2, alpha) - oracle::loss(p, y, 2, alpha)) <= 1e-12);
    }
    CHECK_THROWS_AS(distill_loss(std::vector<double>{0.5, 0.6}, std::vector<double>{0.5, 0.5}, 0, 0.0),
                    InvalidArgument);
}

TEST_CASE("analytic gradients match central differences") {
    Rng rng(7);
    for (const auto& arch : {kLinear, kHidden}) {
        for (int i = 0; i < 60; ++i) {
            const auto s = random_state(arch, rng, 1.0);
            const auto x = random_vec(arch.feature_dim, rng);
            const auto y = random_dist(arch.num_classes, rng);
            const auto hard = static_cast<std::size_t>(rng.below(arch.num_classes));
            const double alpha = i % 3 == 0 ? 0.0 : rng.uniform();
            const auto g = loss_gradient(s, {x, y, hard}, alpha);
            const auto fd = oracle::fd_gradient(s, x, y, hard, alpha);
            REQUIRE(g.size() == fd.size());
            for (std::size_t j = 0; j < g.size(); ++j)
                CHECK(std::abs(g[j] - fd[j]) <= 1e-4 * std::max(1.0, std::abs(fd[j])));
        }
    }
}

TEST_CASE("one SGD step on one example follows the gradient") {
    Rng rng(8);
    const auto s = random_state(kHidden, rng, 0.5);
    const auto x = random_vec(3, rng);
    const auto y = random_dist(4, rng);
    TrainHyper h;
    h.learning_rate = 0.3;
    h.batch_size = 1;
    const std::vector<TrainExample> ex{{x, y, 1}};
    const auto t = train(s, ex, 1, h);
    const auto fd = oracle::fd_gradient(s, x, y, 1, 0.0);
    for (std::size_t j = 0; j < fd.size(); ++j) {
        const double expect = s.params[j] - 0.3 * fd[j];
        CHECK(std::abs(t.params[j] - expect) <= 1e-4 * std::max(1.0, std::abs(expect)));
    }
    CHECK(t.rng_cursor == s.rng_cursor + 1);
}

TEST_CASE("train is deterministic and epochs=0 is the identity") {
    Rng rng(9);
    const auto s = init_model(kLinear, 3);
    std::vector<std::vector<double>> xs, ys;
    for (int i = 0; i < 40; ++i) {
        xs.push_back(random_vec(2, rng));
        ys.push_back(random_dist(3, rng));
    }
    std::vector<TrainExample> ex;
    for (int i = 0; i < 40; ++i) ex.push_back({xs[i], ys[i], static_cast<std::size_t>(i % 3)});
    TrainHyper h;
    h.seed = 12;
    h.batch_size = 7;
    CHECK(train(s, ex, 0, h) == s);
    const auto a = train(s, ex, 3, h);
    CHECK(a == train(s, ex, 3, h));
    CHECK_FALSE(a == s);
    CHECK_THROWS_AS(train(s, std::vector<TrainExample>{}, 1, h), InvalidArgument);
}

TEST_CASE("training lowers the mean loss") {
    Rng rng(10);
    std::vector<std::vector<double>> xs;
    std::vector<std::vector<double>> onehot{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    std::vector<TrainExample> ex;
    for (int i = 0; i < 90; ++i) xs.push_back({static_cast<double>(i % 3) * 3 + rng.uniform(), rng.uniform()});
    for (int i = 0; i < 90; ++i) ex.push_back({xs[i], onehot[i % 3], static_cast<std::size_t>(i % 3)});
    const auto s = init_model(kHidden.kind == ModelKind::one_hidden_layer ? ModelArch{ModelKind::one_hidden_layer, 2, 3, 8}
                                                                           : kLinear, 1);
    TrainHyper h;
    const auto t = train(s, ex, 20, h);
    CHECK(mean_loss(t, ex, 0.0) < mean_loss(s, ex, 0.0));
}

TEST_CASE("aggregate examples") {
    const std::vector<Probabilities> one{{0.2, 0.8}};
    CHECK(aggregate(one) == one[0]);
    const std::vector<Probabilities> two{{1, 0}, {0, 1}};
    CHECK(aggregate(two) == Probabilities{0.5, 0.5});
    Rng rng(11);
    std::vector<Probabilities> five;
    for (int i = 0; i < 5; ++i) five.push_back(random_dist(4, rng));
    const auto got = aggregate(five);
    const auto want = oracle::mean(five);
    for (std::size_t c = 0; c < 4; ++c) CHECK(std::abs(got[c] - want[c]) <= 1e-12);
    std::vector<Probabilities> rev(five.rbegin(), five.rend());
    const auto back = aggregate(rev);
    for (std::size_t c = 0; c < 4; ++c) CHECK(std::abs(back[c] - got[c]) <= 1e-15);
    CHECK_THROWS_AS(aggregate(std::vector<Probabilities>{}), InvalidArgument);
}

TEST_CASE("subensemble soft labels") {
    Dataset d(3, 2);
    Rng rng(12);
    for (PointId id = 0; id < 4; ++id) d.add({id, random_vec(2, rng), static_cast<std::size_t>(id % 3)});
    const std::vector<PointId> pts{3, 1, 0, 2};

    ModelState zero{kLinear, std::vector<double>(9, 0.0), 0};
    const std::vector<const ModelState*> only_zero{&zero};
    for (const auto& e : subensemble_soft_labels(only_zero, d, pts).entries)
        for (double p : e.probs) CHECK(p == doctest::Approx(1.0 / 3));

    const auto a = random_state(kLinear, rng, 1), b = random_state(kLinear, rng, 1), c = random_state(kLinear, rng, 1);
    const std::vector<const ModelState*> single{&a};
    const auto s1 = subensemble_soft_labels(single, d, pts);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        CHECK(s1.entries[i].id == pts[i]);
        CHECK(s1.entries[i].probs == predict(a, d.at(pts[i]).features));
    }

    const std::vector<const ModelState*> three{&a, &b, &c};
    const auto s3 = subensemble_soft_labels(three, d, pts);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const auto& x = d.at(pts[i]).features;
        const auto want = oracle::mean({oracle::softmax(oracle::logits(a, x)), oracle::softmax(oracle::logits(b, x)),
                                        oracle::softmax(oracle::logits(c, x))});
        for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(s3.entries[i].probs[k] - want[k]) <= 1e-12);
        check_distribution(s3.entries[i].probs);
    }
    CHECK_THROWS_AS(subensemble_soft_labels(std::vector<const ModelState*>{}, d, pts), InvalidArgument);
}

TEST_CASE("argmax breaks ties toward the lowest index") {
    CHECK(argmax(std::vector<double>{0.25, 0.25, 0.25, 0.25}) == 0);
    CHECK(argmax(std::vector<double>{0.1, 0.45, 0.45}) == 1);
}
