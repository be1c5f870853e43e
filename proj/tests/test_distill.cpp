#include "sodkd/distill.hpp"

#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "sodkd/errors.hpp"
#include "sodkd/rng.hpp"

using sodkd::DistillConfig;
using sodkd::Grid;
using sodkd::NodeId;
using sodkd::Tape;

namespace {

Grid random_logits(int h, int w, sodkd::Rng& rng, double lo = -3.0, double hi = 3.0) {
    Grid g(h, w, 1);
    for (double& v : g.data) v = rng.uniform(lo, hi);
    return g;
}

Grid random_mask(int h, int w, sodkd::Rng& rng, double fg = 0.4) {
    Grid g(h, w, 1);
    for (double& v : g.data) v = rng.uniform() < fg ? 1.0 : 0.0;
    return g;
}

// scalar reference for one pixel of the tempered KL divergence
double kl_pixel_oracle(double zt, double zs, double T) {
    const double q = 1.0 / (1.0 + std::exp(-zt / T));
    const double s = 1.0 / (1.0 + std::exp(-zs / T));
    return q * std::log(q / s) + (1.0 - q) * std::log((1.0 - q) / (1.0 - s));
}

}  // namespace

TEST_CASE("config validation enforces documented ranges") {
    DistillConfig ok;
    CHECK_NOTHROW(ok.validate());
    DistillConfig bad = ok;
    bad.p = 1.5;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = ok;
    bad.temperature = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = ok;
    bad.epsilon = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = ok;
    bad.epsilon = 0.6;  // above threshold
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("soft_iou of a map with itself is 1") {
    sodkd::Rng rng(3);
    Grid g = random_mask(6, 6, rng);
    CHECK(sodkd::soft_iou(g, g) == 1.0);
}

TEST_CASE("soft_iou of an empty prediction against a nonempty mask is 0") {
    sodkd::Rng rng(4);
    Grid g = random_mask(6, 6, rng);
    g.data[0] = 1.0;
    Grid p(6, 6, 1, 0.0);
    CHECK(sodkd::soft_iou(p, g) == 0.0);
}

TEST_CASE("soft_iou worked 2x2 example") {
    Grid p = Grid::from(2, 2, 1, {1.0, 0.5, 0.0, 0.0});
    Grid g = Grid::from(2, 2, 1, {1.0, 1.0, 0.0, 0.0});
    // intersection 1.5, sums 1.5 and 2 -> 1.5 / (1.5 + 2 - 1.5)
    CHECK(sodkd::soft_iou(p, g) == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(sodkd::alpha_t(p, g) == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(sodkd::beta_s(p, g) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("soft_iou is total on all-empty inputs") {
    Grid z(3, 3, 1, 0.0);
    CHECK(sodkd::soft_iou(z, z) == 0.0);
}

TEST_CASE("soft_iou validates ranges and shapes") {
    Grid p(2, 2, 1, 0.5);
    Grid g(2, 2, 1, 1.0);
    Grid wrong(2, 3, 1, 1.0);
    CHECK_THROWS_AS(sodkd::soft_iou(p, wrong), sodkd::ShapeError);
    Grid hot(2, 2, 1, 1.5);
    CHECK_THROWS_AS(sodkd::soft_iou(hot, g), std::invalid_argument);
    Grid softmask(2, 2, 1, 0.5);
    CHECK_THROWS_AS(sodkd::soft_iou(p, softmask), std::invalid_argument);
}

TEST_CASE("alpha is 1 for a perfect teacher and 0 for a complemented one") {
    sodkd::Rng rng(5);
    Grid g = random_mask(5, 5, rng);
    CHECK(sodkd::alpha_t(g, g) == 1.0);
    Grid inv(5, 5, 1);
    for (std::size_t i = 0; i < g.data.size(); ++i) inv.data[i] = 1.0 - g.data[i];
    CHECK(sodkd::alpha_t(inv, g) == 0.0);
    CHECK(sodkd::beta_s(g, g) == 0.0);
    CHECK(sodkd::beta_s(inv, g) == 1.0);
}

TEST_CASE("theta at alpha=beta=1 is tanh(1) for any p") {
    DistillConfig cfg;
    for (double p : {0.0, 0.3, 0.7, 1.0}) {
        cfg.p = p;
        auto [th, gated] = sodkd::theta(1.0, 1.0, cfg);
        CHECK_FALSE(gated);
        CHECK(th == doctest::Approx(0.7615941559557649).epsilon(1e-15));
    }
}

TEST_CASE("theta gates to epsilon at low teacher confidence") {
    DistillConfig cfg;
    auto [th, gated] = sodkd::theta(0.4, 0.9, cfg);
    CHECK(gated);
    CHECK(th == 0.01);
    // equality with the threshold also gates
    auto [th2, gated2] = sodkd::theta(0.5, 0.9, cfg);
    CHECK(gated2);
    CHECK(th2 == 0.01);
    // strictly above does not
    auto [th3, gated3] = sodkd::theta(0.5 + 1e-12, 0.9, cfg);
    CHECK_FALSE(gated3);
}

TEST_CASE("theta worked example at alpha=0.9 beta=0.2 p=0.7") {
    DistillConfig cfg;
    auto [th, gated] = sodkd::theta(0.9, 0.2, cfg);
    CHECK_FALSE(gated);
    CHECK(th == doctest::Approx(0.5176789998417533).epsilon(1e-12));
}

TEST_CASE("theta treats 0^0 as 1 at the p boundaries") {
    DistillConfig cfg;
    cfg.p = 1.0;  // theta = tanh(alpha^1 * beta^0) even at beta = 0
    auto [th, gated] = sodkd::theta(0.8, 0.0, cfg);
    CHECK_FALSE(gated);
    CHECK(th == doctest::Approx(std::tanh(0.8)).epsilon(1e-15));
    cfg.p = 0.0;
    auto [th2, g2] = sodkd::theta(0.8, 0.3, cfg);
    CHECK(th2 == doctest::Approx(std::tanh(0.3)).epsilon(1e-15));
}

TEST_CASE("ungated theta stays within (0, tanh(1)]") {
    DistillConfig cfg;
    sodkd::Rng rng(9);
    const double cap = std::tanh(1.0);
    for (int i = 0; i < 2000; ++i) {
        cfg.p = rng.uniform();
        double a = rng.uniform(cfg.threshold + 1e-9, 1.0);
        double b = rng.uniform(1e-9, 1.0);
        auto [th, gated] = sodkd::theta(a, b, cfg);
        CHECK_FALSE(gated);
        CHECK(th > 0.0);
        CHECK(th <= cap);
    }
}

TEST_CASE("ungated theta increases in both alpha and beta") {
    DistillConfig cfg;
    sodkd::Rng rng(10);
    for (int i = 0; i < 500; ++i) {
        cfg.p = rng.uniform(0.05, 0.95);
        double a = rng.uniform(0.51, 0.99);
        double b = rng.uniform(0.01, 0.99);
        double da = rng.uniform(1e-4, 1.0 - a);
        double db = rng.uniform(1e-4, 1.0 - b);
        CHECK(sodkd::theta(a + da, b, cfg).theta > sodkd::theta(a, b, cfg).theta);
        CHECK(sodkd::theta(a, b + db, cfg).theta > sodkd::theta(a, b, cfg).theta);
    }
}

TEST_CASE("gate dichotomy holds across random traces") {
    DistillConfig cfg;
    sodkd::Rng rng(11);
    for (int i = 0; i < 2000; ++i) {
        double a = rng.uniform();
        double b = rng.uniform();
        auto [th, gated] = sodkd::theta(a, b, cfg);
        CHECK(gated == (a <= cfg.threshold));
        if (gated) CHECK(th == cfg.epsilon);
    }
}

TEST_CASE("ce loss vanishes for strongly correct logits") {
    sodkd::Rng rng(12);
    Grid g = random_mask(4, 4, rng);
    Grid z(4, 4, 1);
    for (std::size_t i = 0; i < g.data.size(); ++i) z.data[i] = g.data[i] == 1.0 ? 50.0 : -50.0;
    Tape t;
    NodeId loss = sodkd::ce_loss(t, t.leaf(z), g);
    CHECK(t.value(loss).data[0] < 1e-10);
    CHECK(t.value(loss).data[0] >= 0.0);
}

TEST_CASE("ce loss at zero logits is ln 2 for any mask") {
    sodkd::Rng rng(13);
    Grid g = random_mask(5, 5, rng);
    Tape t;
    NodeId loss = sodkd::ce_loss(t, t.leaf(Grid(5, 5, 1, 0.0)), g);
    CHECK(t.value(loss).data[0] == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("ce gradient is sigmoid(z) minus target, scaled by 1/N") {
    Tape t;
    Grid z = Grid::from(1, 2, 1, {0.7, -1.1});
    Grid g = Grid::from(1, 2, 1, {1.0, 0.0});
    NodeId zn = t.leaf(z, true);
    t.backward(sodkd::ce_loss(t, zn, g));
    for (int i = 0; i < 2; ++i) {
        double want = (sodkd::sigmoid(z.data[i]) - g.data[i]) / 2.0;
        CHECK(t.grad(zn).data[i] == doctest::Approx(want).epsilon(1e-14));
    }
}

TEST_CASE("ce gradient matches finite differences") {
    sodkd::Rng rng(14);
    Grid g = random_mask(4, 4, rng);
    Grid z = random_logits(4, 4, rng);
    std::vector<Grid*> params = {&z};
    auto build = [&](Tape& t) {
        NodeId zn = t.leaf(z, true);
        return sodkd::ce_loss(t, zn, g);
    };
    CHECK(sodkd::fd_check(params, build, 1e-4, -1) < 1e-6);
}

TEST_CASE("kl loss is zero when student equals teacher") {
    sodkd::Rng rng(15);
    Grid z = random_logits(4, 4, rng);
    Tape t;
    NodeId loss = sodkd::kl_loss(t, t.leaf(z), z, 5.0);
    CHECK(t.value(loss).data[0] == doctest::Approx(0.0).epsilon(1e-18));
}

TEST_CASE("kl loss is nonnegative on random logit pairs") {
    sodkd::Rng rng(16);
    for (int i = 0; i < 1000; ++i) {
        Tape t;
        Grid zs = random_logits(2, 2, rng, -6.0, 6.0);
        Grid zt = random_logits(2, 2, rng, -6.0, 6.0);
        NodeId loss = sodkd::kl_loss(t, t.leaf(zs), zt, rng.uniform(0.5, 8.0));
        CHECK(t.value(loss).data[0] >= 0.0);
    }
}

TEST_CASE("kl single-pixel worked example with and without temperature scaling") {
    Tape t;
    NodeId zs = t.leaf(sodkd::scalar_grid(0.0));
    Grid zt = sodkd::scalar_grid(2.0);
    // frozen from a high-precision evaluation of
    // q*ln(q/s) + (1-q)*ln((1-q)/(1-s)) at q = sigmoid(0.4), s = 0.5
    const double want = 0.019606992204973486;
    NodeId plain = sodkd::kl_loss(t, zs, zt, 5.0, false);
    CHECK(t.value(plain).data[0] == doctest::Approx(want).epsilon(1e-12));
    CHECK(t.value(plain).data[0] ==
          doctest::Approx(kl_pixel_oracle(2.0, 0.0, 5.0)).epsilon(1e-14));
    NodeId scaled = sodkd::kl_loss(t, zs, zt, 5.0, true);
    CHECK(t.value(scaled).data[0] == doctest::Approx(25.0 * want).epsilon(1e-12));
}

TEST_CASE("kl gradient only reaches the student and matches finite differences") {
    sodkd::Rng rng(17);
    Grid zs = random_logits(4, 4, rng);
    Grid zt = random_logits(4, 4, rng);
    std::vector<Grid*> params = {&zs};
    auto build = [&](Tape& t) {
        NodeId zn = t.leaf(zs, true);
        return sodkd::kl_loss(t, zn, zt, 5.0);
    };
    CHECK(sodkd::fd_check(params, build, 1e-4, -1) < 1e-6);
}

TEST_CASE("kl rejects bad temperature and shape") {
    Tape t;
    NodeId zs = t.leaf(Grid(2, 2, 1));
    CHECK_THROWS_AS(sodkd::kl_loss(t, zs, Grid(2, 2, 1), 0.0), std::invalid_argument);
    CHECK_THROWS_AS(sodkd::kl_loss(t, zs, Grid(2, 3, 1), 5.0), sodkd::ShapeError);
}

TEST_CASE("dynamic loss with theta forced to 0 is exactly the ce loss") {
    sodkd::Rng rng(18);
    Grid g = random_mask(4, 4, rng);
    Grid zs = random_logits(4, 4, rng);
    Grid zt = random_logits(4, 4, rng);
    DistillConfig cfg;
    Tape t;
    NodeId zn = t.leaf(zs);
    auto [loss, trace] = sodkd::dynamic_loss(t, zn, zt, g, cfg, 0, "s", 0.0);
    NodeId ce = sodkd::ce_loss(t, zn, g);
    CHECK(t.value(loss).data[0] == doctest::Approx(t.value(ce).data[0]).epsilon(1e-15));
}

TEST_CASE("dynamic loss with theta forced to 1 is exactly the kl loss") {
    sodkd::Rng rng(19);
    Grid g = random_mask(4, 4, rng);
    Grid zs = random_logits(4, 4, rng);
    Grid zt = random_logits(4, 4, rng);
    DistillConfig cfg;
    Tape t;
    NodeId zn = t.leaf(zs);
    auto [loss, trace] = sodkd::dynamic_loss(t, zn, zt, g, cfg, 0, "s", 1.0);
    NodeId kl = sodkd::kl_loss(t, zn, zt, cfg.temperature, cfg.kl_t2_scaling);
    CHECK(t.value(loss).data[0] == doctest::Approx(t.value(kl).data[0]).epsilon(1e-15));
}

TEST_CASE("a gated sample recomposes as 0.01 KL + 0.99 CE") {
    sodkd::Rng rng(20);
    Grid g = random_mask(6, 6, rng);
    // teacher predicts the complement: alpha 0, far below the threshold
    Grid zt(6, 6, 1);
    for (std::size_t i = 0; i < g.data.size(); ++i) zt.data[i] = g.data[i] == 1.0 ? -9.0 : 9.0;
    Grid zs = random_logits(6, 6, rng);
    DistillConfig cfg;
    Tape t;
    NodeId zn = t.leaf(zs);
    auto [loss, trace] = sodkd::dynamic_loss(t, zn, zt, g, cfg, 7, "noisy");
    CHECK(trace.gated);
    CHECK(trace.theta == 0.01);
    double kl = t.value(sodkd::kl_loss(t, zn, zt, cfg.temperature, cfg.kl_t2_scaling)).data[0];
    double ce = t.value(sodkd::ce_loss(t, zn, g)).data[0];
    CHECK(t.value(loss).data[0] == doctest::Approx(0.01 * kl + 0.99 * ce).epsilon(1e-13));
}

TEST_CASE("dynamic loss coefficients always form a convex combination") {
    sodkd::Rng rng(21);
    DistillConfig cfg;
    for (int i = 0; i < 50; ++i) {
        Grid g = random_mask(4, 4, rng);
        Grid zs = random_logits(4, 4, rng);
        Grid zt = random_logits(4, 4, rng, -6.0, 6.0);
        Tape t;
        auto [loss, trace] = sodkd::dynamic_loss(t, t.leaf(zs), zt, g, cfg);
        CHECK(trace.theta > 0.0);
        CHECK(trace.theta < 1.0);
    }
}

TEST_CASE("dynamic loss gradient matches finite differences with theta frozen") {
    sodkd::Rng rng(22);
    Grid g = random_mask(4, 4, rng);
    Grid zs = random_logits(4, 4, rng);
    Grid zt = random_logits(4, 4, rng);
    DistillConfig cfg;
    // compute theta once from the unperturbed prediction, then hold it fixed
    Tape probe;
    auto [n0, trace0] = sodkd::dynamic_loss(probe, probe.leaf(zs), zt, g, cfg);
    const double frozen = trace0.theta;
    std::vector<Grid*> params = {&zs};
    auto build = [&](Tape& t) {
        NodeId zn = t.leaf(zs, true);
        return sodkd::dynamic_loss(t, zn, zt, g, cfg, 0, "", frozen).loss;
    };
    CHECK(sodkd::fd_check(params, build, 1e-4, -1) < 1e-6);
}

TEST_CASE("backward through dynamic loss leaves theta out of the gradient") {
    // two students with different errors get different theta but the gradient
    // of each term is still the analytic CE/KL gradient scaled by the frozen
    // coefficients
    sodkd::Rng rng(23);
    Grid g = random_mask(4, 4, rng);
    Grid zs = random_logits(4, 4, rng);
    Grid zt = random_logits(4, 4, rng);
    DistillConfig cfg;

    Tape t;
    NodeId zn = t.leaf(zs, true);
    auto [loss, trace] = sodkd::dynamic_loss(t, zn, zt, g, cfg, 0, "a");
    t.backward(loss);

    Tape t2;
    NodeId zn2 = t2.leaf(zs, true);
    NodeId kl = sodkd::kl_loss(t2, zn2, zt, cfg.temperature, cfg.kl_t2_scaling);
    NodeId ce = sodkd::ce_loss(t2, zn2, g);
    t2.backward(t2.add(t2.scale(kl, trace.theta), t2.scale(ce, 1.0 - trace.theta)));

    for (std::size_t i = 0; i < zs.data.size(); ++i) {
        CHECK(t.grad(zn).data[i] == doctest::Approx(t2.grad(zn2).data[i]).epsilon(1e-14));
    }
}

TEST_CASE("trace rows serialize with the documented header") {
    CHECK(sodkd::trace_csv_header() == "iteration,sample_id,alpha,beta,theta,gated");
    sodkd::WeightTrace row;
    row.iteration = 12;
    row.sample_id = "clean_003";
    row.alpha_t = 0.75;
    row.beta_s = 0.25;
    row.theta = 0.01;
    row.gated = true;
    CHECK(sodkd::trace_csv_row(row) == "12,clean_003,0.75,0.25,0.01,1");
}
