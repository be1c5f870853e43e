#include "sodkd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "json.hpp"
#include "sodkd/errors.hpp"
#include "sodkd/rng.hpp"

using sodkd::Grid;

namespace {

Grid soft_map(int h, int w, sodkd::Rng& rng, bool snap_to_levels = false) {
    Grid g(h, w, 1);
    for (double& v : g.data) {
        v = rng.uniform();
        if (snap_to_levels) v = static_cast<double>(rng.below(256)) / 255.0;
    }
    return g;
}

Grid random_mask(int h, int w, sodkd::Rng& rng, double fg = 0.3) {
    Grid g(h, w, 1);
    for (double& v : g.data) v = rng.uniform() < fg ? 1.0 : 0.0;
    return g;
}

// rectangle well away from the border
Grid interior_mask(int h, int w) {
    Grid g(h, w, 1, 0.0);
    for (int y = h / 4; y < 3 * h / 4; ++y)
        for (int x = w / 4; x < 3 * w / 4; ++x) g.at(y, x, 0) = 1.0;
    return g;
}

Grid complement(const Grid& g) {
    Grid out(g.height, g.width, 1);
    for (std::size_t i = 0; i < g.data.size(); ++i) out.data[i] = 1.0 - g.data[i];
    return out;
}

double mean_of(const Grid& g) {
    double s = 0.0;
    for (double v : g.data) s += v;
    return s / static_cast<double>(g.data.size());
}

// the naive 256-pass recomputation: one full f_beta scan per threshold
std::vector<double> naive_f_curve(const Grid& s, const Grid& g) {
    std::vector<double> curve(256);
    for (int t = 0; t < 256; ++t) curve[static_cast<std::size_t>(t)] = sodkd::f_beta(s, g, t);
    return curve;
}

// fully handwritten variant for formula cross-checking (tolerance-based: the
// compiler may fuse these expressions differently than the library's)
std::vector<double> handwritten_f_curve(const Grid& s, const Grid& g, double beta2) {
    std::vector<double> curve(256);
    double gsum = 0.0;
    for (double v : g.data) gsum += v;
    for (int t = 0; t < 256; ++t) {
        double tp = 0.0, fp = 0.0, pos = 0.0;
        for (std::size_t i = 0; i < s.data.size(); ++i) {
            if (s.data[i] > t / 255.0) {
                pos += 1.0;
                (g.data[i] == 1.0 ? tp : fp) += 1.0;
            }
        }
        double f;
        if (gsum == 0.0) {
            f = pos == 0.0 ? 1.0 : 0.0;
        } else {
            const double p = (tp + fp) > 0.0 ? tp / (tp + fp) : 0.0;
            const double r = tp / gsum;
            const double denom = beta2 * p + r;
            f = denom == 0.0 ? 0.0 : (1.0 + beta2) * p * r / denom;
        }
        curve[static_cast<std::size_t>(t)] = f;
    }
    return curve;
}

double f1_oracle(const Grid& s, const Grid& g) {
    double tp = 0.0, fp = 0.0, fn = 0.0;
    for (std::size_t i = 0; i < s.data.size(); ++i) {
        if (s.data[i] == 1.0 && g.data[i] == 1.0) tp += 1.0;
        if (s.data[i] == 1.0 && g.data[i] == 0.0) fp += 1.0;
        if (s.data[i] == 0.0 && g.data[i] == 1.0) fn += 1.0;
    }
    if (tp == 0.0) return 0.0;
    const double p = tp / (tp + fp);
    const double r = tp / (tp + fn);
    return 2.0 * p * r / (p + r);
}

// closed form for constant predictions: spread terms vanish, mixed quadrants
// score zero, uniform quadrants score one
double s_measure_const_oracle(double c, const Grid& g) {
    const double n = static_cast<double>(g.data.size());
    double m = mean_of(g);
    auto object = [](double x) { return 2.0 * x / (x * x + 1.0); };
    const double so = m * object(c) + (1.0 - m) * object(1.0 - c);

    double cy = 0.0, cx = 0.0, cnt = 0.0;
    for (int y = 0; y < g.height; ++y)
        for (int x = 0; x < g.width; ++x)
            if (g.at(y, x, 0) == 1.0) {
                cy += y;
                cx += x;
                cnt += 1.0;
            }
    const int sy = static_cast<int>(std::round(cy / cnt)) + 1;
    const int sx = static_cast<int>(std::round(cx / cnt)) + 1;
    double sr = 0.0;
    const int bounds[4][4] = {{0, sy, 0, sx},
                              {0, sy, sx, g.width},
                              {sy, g.height, 0, sx},
                              {sy, g.height, sx, g.width}};
    for (const auto& b : bounds) {
        double lo = 1.0, hi = 0.0, cells = 0.0;
        for (int y = b[0]; y < b[1]; ++y)
            for (int x = b[2]; x < b[3]; ++x) {
                lo = std::min(lo, g.at(y, x, 0));
                hi = std::max(hi, g.at(y, x, 0));
                cells += 1.0;
            }
        const bool uniform = cells == 0.0 || lo == hi;
        sr += (cells / n) * (uniform ? 1.0 : 0.0);
    }
    return std::max(0.0, 0.5 * so + 0.5 * sr);
}

}  // namespace

TEST_CASE("mae anchors") {
    sodkd::Rng rng(1);
    Grid g = random_mask(6, 6, rng);
    CHECK(sodkd::mae(g, g) == 0.0);
    CHECK(sodkd::mae(complement(g), g) == 1.0);
    Grid s = Grid::from(2, 2, 1, {0.5, 0.5, 0.5, 0.5});
    Grid m = Grid::from(2, 2, 1, {1.0, 0.0, 1.0, 0.0});
    CHECK(sodkd::mae(s, m) == 0.5);
}

TEST_CASE("mae of a map and its complement sum to one") {
    sodkd::Rng rng(2);
    for (int i = 0; i < 20; ++i) {
        Grid g = random_mask(7, 5, rng);
        Grid s = random_mask(7, 5, rng, 0.5);
        CHECK(sodkd::mae(s, g) + sodkd::mae(complement(s), g) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("mae rejects mismatched shapes") {
    CHECK_THROWS_AS(sodkd::mae(Grid(2, 2, 1), Grid(2, 3, 1)), sodkd::ShapeError);
    CHECK_THROWS_AS(sodkd::mae(Grid(2, 2, 2), Grid(2, 2, 2)), sodkd::ShapeError);
}

TEST_CASE("f_beta is 1 for a perfect binary prediction") {
    Grid g = interior_mask(8, 8);
    CHECK(sodkd::f_beta(g, g, 127) == 1.0);
}

TEST_CASE("f_beta is 0 for an empty prediction against a nonempty mask") {
    Grid g = interior_mask(8, 8);
    CHECK(sodkd::f_beta(Grid(8, 8, 1, 0.0), g, 127) == 0.0);
}

TEST_CASE("f_beta fixture with precision 0.8 and recall 0.5") {
    // 8 mask pixels, 5 predicted positives of which 4 hit
    Grid g = Grid::from(2, 5, 1, {1, 1, 1, 1, 1, 1, 1, 1, 0, 0});
    Grid s = Grid::from(2, 5, 1, {1, 1, 1, 1, 0, 0, 0, 0, 1, 0});
    CHECK(sodkd::f_beta(s, g, 127) == doctest::Approx(0.52 / 0.74).epsilon(1e-12));
}

TEST_CASE("f_beta on empty masks rewards only empty predictions") {
    Grid g(4, 4, 1, 0.0);
    CHECK(sodkd::f_beta(Grid(4, 4, 1, 0.0), g, 127) == 1.0);
    Grid s(4, 4, 1, 0.0);
    s.at(0, 0, 0) = 1.0;
    CHECK(sodkd::f_beta(s, g, 127) == 0.0);
}

TEST_CASE("binarization is strictly greater than threshold/255") {
    Grid g = Grid::from(1, 2, 1, {1.0, 0.0});
    Grid s = Grid::from(1, 2, 1, {127.0 / 255.0, 0.0});
    // at threshold 127 the pixel equals the cut and must not count
    CHECK(sodkd::f_beta(s, g, 127) == 0.0);
    CHECK(sodkd::f_beta(s, g, 126) == 1.0);
}

TEST_CASE("constant half-gray map yields a two-level f curve") {
    sodkd::Rng rng(3);
    Grid g = random_mask(6, 6, rng);
    g.data[7] = 1.0;
    Grid s(6, 6, 1, 0.5);
    auto curve = sodkd::f_curve(s, g);
    for (int t = 0; t < 127; ++t) CHECK(curve[static_cast<std::size_t>(t)] == curve[127]);
    for (int t = 128; t < 256; ++t) CHECK(curve[static_cast<std::size_t>(t)] == 0.0);
    CHECK(curve[0] > 0.0);
}

TEST_CASE("f_curve single-pass histogram equals the naive recomputation exactly") {
    sodkd::Rng rng(4);
    for (int rep = 0; rep < 100; ++rep) {
        const int h = 4 + static_cast<int>(rng.below(9));
        const int w = 4 + static_cast<int>(rng.below(9));
        Grid s = soft_map(h, w, rng, rep % 2 == 1);
        Grid g = random_mask(h, w, rng, 0.35);
        auto fast = sodkd::f_curve(s, g);
        auto naive = naive_f_curve(s, g);
        REQUIRE(fast.size() == naive.size());
        for (std::size_t t = 0; t < 256; ++t) CHECK(fast[t] == naive[t]);
        if (rep < 10) {
            auto hand = handwritten_f_curve(s, g, 0.3);
            for (std::size_t t = 0; t < 256; ++t) {
                CHECK(fast[t] == doctest::Approx(hand[t]).epsilon(1e-13));
            }
        }
    }
}

TEST_CASE("weighted_f is exactly 1 for a perfect prediction") {
    Grid g = interior_mask(16, 16);
    CHECK(sodkd::weighted_f(g, g) == 1.0);
}

TEST_CASE("weighted_f is 0 for an all-zero prediction of an interior object") {
    Grid g = interior_mask(16, 16);
    CHECK(sodkd::weighted_f(Grid(16, 16, 1, 0.0), g) < 1e-12);
}

TEST_CASE("weighted_f with a degenerate window reduces to plain F1") {
    sodkd::WeightedFOptions plain;
    plain.window_radius = 0;
    plain.decay_constant = std::numeric_limits<double>::infinity();
    sodkd::Rng rng(5);
    for (int rep = 0; rep < 20; ++rep) {
        Grid g = random_mask(9, 7, rng, 0.4);
        Grid s = random_mask(9, 7, rng, 0.4);
        bool g_empty = true, s_empty = true;
        for (double v : g.data) g_empty = g_empty && v == 0.0;
        for (double v : s.data) s_empty = s_empty && v == 0.0;
        if (g_empty || s_empty) continue;
        CHECK(sodkd::weighted_f(s, g, plain) == doctest::Approx(f1_oracle(s, g)).epsilon(1e-12));
    }
}

TEST_CASE("weighted_f penalizes far-from-object errors more than near ones") {
    Grid g = interior_mask(16, 16);
    Grid near = g;
    near.at(16 / 4, 16 / 4 - 1, 0) = 1.0;  // false positive hugging the object
    Grid far = g;
    far.at(0, 0, 0) = 1.0;  // false positive in the corner
    CHECK(sodkd::weighted_f(near, g) > sodkd::weighted_f(far, g));
}

TEST_CASE("weighted_f handles empty masks totally") {
    Grid g(8, 8, 1, 0.0);
    CHECK(sodkd::weighted_f(Grid(8, 8, 1, 0.0), g) == 1.0);
    Grid s(8, 8, 1, 0.0);
    s.at(1, 1, 0) = 0.5;
    CHECK(sodkd::weighted_f(s, g) == 0.0);
}

TEST_CASE("s_measure and e_measure are exactly 1 for a perfect prediction") {
    Grid g = interior_mask(12, 12);
    CHECK(sodkd::s_measure(g, g) == 1.0);
    CHECK(sodkd::e_measure(g, g) == 1.0);
    sodkd::Rng rng(6);
    Grid g2 = random_mask(9, 9, rng, 0.5);
    g2.data[0] = 1.0;
    g2.data[1] = 0.0;
    CHECK(sodkd::s_measure(g2, g2) == 1.0);
    CHECK(sodkd::e_measure(g2, g2) == 1.0);
}

TEST_CASE("binary prediction scores 1 only when it equals the mask") {
    Grid g = interior_mask(12, 12);
    sodkd::Rng rng(7);
    for (int rep = 0; rep < 10; ++rep) {
        Grid s = g;
        const int flips = 1 + static_cast<int>(rng.below(5));
        for (int i = 0; i < flips; ++i) {
            std::size_t j = rng.below(s.data.size());
            s.data[j] = 1.0 - s.data[j];
        }
        CHECK(sodkd::s_measure(s, g) < 1.0);
        CHECK(sodkd::e_measure(s, g) < 1.0);
        CHECK(sodkd::weighted_f(s, g) < 1.0);
    }
}

TEST_CASE("inverted prediction scores near zero alignment on balanced masks") {
    Grid g(10, 10, 1, 0.0);
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 5; ++x) g.at(y, x, 0) = 1.0;  // half the frame
    CHECK(sodkd::e_measure(complement(g), g) <= 0.25);
}

TEST_CASE("constant predictions match the closed-form structure score") {
    Grid g = interior_mask(12, 16);
    const double c = mean_of(g);
    Grid s(12, 16, 1, c);
    CHECK(sodkd::s_measure(s, g) == doctest::Approx(s_measure_const_oracle(c, g)).epsilon(1e-12));
    // alignment collapses to a quarter for any constant map
    CHECK(sodkd::e_measure(s, g) == 0.25);
    Grid s2(12, 16, 1, 0.37);
    CHECK(sodkd::s_measure(s2, g) ==
          doctest::Approx(s_measure_const_oracle(0.37, g)).epsilon(1e-12));
}

TEST_CASE("all metrics stay within the unit interval on random inputs") {
    sodkd::Rng rng(8);
    for (int rep = 0; rep < 50; ++rep) {
        const int h = 4 + static_cast<int>(rng.below(13));
        const int w = 4 + static_cast<int>(rng.below(13));
        Grid s = soft_map(h, w, rng);
        Grid g = random_mask(h, w, rng, rng.uniform(0.05, 0.95));
        const double m = sodkd::mae(s, g);
        const double wf = sodkd::weighted_f(s, g);
        const double sm = sodkd::s_measure(s, g);
        const double em = sodkd::e_measure(s, g);
        for (double v : {m, wf, sm, em}) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        auto curve = sodkd::f_curve(s, g);
        const double cmax = *std::max_element(curve.begin(), curve.end());
        double cmean = 0.0;
        for (double v : curve) cmean += v / 256.0;
        CHECK(cmax >= cmean);
        CHECK(cmax <= 1.0);
        CHECK(cmean >= 0.0);
    }
}

TEST_CASE("evaluate_dataset of one image reduces to the single-image metrics") {
    sodkd::Rng rng(9);
    Grid s = soft_map(10, 10, rng);
    Grid g = interior_mask(10, 10);
    auto rep = sodkd::evaluate_dataset({s}, {g});
    CHECK(rep.mae == sodkd::mae(s, g));
    CHECK(rep.weighted_f == sodkd::weighted_f(s, g));
    CHECK(rep.s_measure == sodkd::s_measure(s, g));
    CHECK(rep.e_measure == sodkd::e_measure(s, g));
    auto curve = sodkd::f_curve(s, g);
    CHECK(rep.max_f == *std::max_element(curve.begin(), curve.end()));
}

TEST_CASE("duplicating an image leaves the report unchanged") {
    sodkd::Rng rng(10);
    Grid s = soft_map(8, 8, rng);
    Grid g = interior_mask(8, 8);
    auto one = sodkd::evaluate_dataset({s}, {g});
    auto two = sodkd::evaluate_dataset({s, s}, {g, g});
    CHECK(one.mae == doctest::Approx(two.mae).epsilon(1e-15));
    CHECK(one.max_f == doctest::Approx(two.max_f).epsilon(1e-15));
    CHECK(one.weighted_f == doctest::Approx(two.weighted_f).epsilon(1e-15));
}

TEST_CASE("evaluate_dataset matches a per-image oracle loop") {
    sodkd::Rng rng(11);
    std::vector<Grid> preds, gts;
    for (int i = 0; i < 10; ++i) {
        preds.push_back(soft_map(9, 9, rng));
        gts.push_back(random_mask(9, 9, rng, 0.4));
    }
    auto rep = sodkd::evaluate_dataset(preds, gts);

    double m = 0, wf = 0, sm = 0, em = 0;
    std::vector<double> curve(256, 0.0);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        m += sodkd::mae(preds[i], gts[i]);
        wf += sodkd::weighted_f(preds[i], gts[i]);
        sm += sodkd::s_measure(preds[i], gts[i]);
        em += sodkd::e_measure(preds[i], gts[i]);
        auto c = sodkd::f_curve(preds[i], gts[i]);
        for (std::size_t t = 0; t < 256; ++t) curve[t] += c[t] / 10.0;
    }
    CHECK(rep.mae == doctest::Approx(m / 10.0).epsilon(1e-12));
    CHECK(rep.weighted_f == doctest::Approx(wf / 10.0).epsilon(1e-12));
    CHECK(rep.s_measure == doctest::Approx(sm / 10.0).epsilon(1e-12));
    CHECK(rep.e_measure == doctest::Approx(em / 10.0).epsilon(1e-12));
    CHECK(rep.max_f ==
          doctest::Approx(*std::max_element(curve.begin(), curve.end())).epsilon(1e-12));
    CHECK(rep.max_f >= rep.mean_f);
}

TEST_CASE("report values do not depend on image order") {
    sodkd::Rng rng(12);
    std::vector<Grid> preds, gts;
    for (int i = 0; i < 6; ++i) {
        preds.push_back(soft_map(8, 8, rng));
        gts.push_back(random_mask(8, 8, rng, 0.4));
    }
    auto fwd = sodkd::evaluate_dataset(preds, gts);
    std::reverse(preds.begin(), preds.end());
    std::reverse(gts.begin(), gts.end());
    auto rev = sodkd::evaluate_dataset(preds, gts);
    CHECK(fwd.mae == doctest::Approx(rev.mae).epsilon(1e-12));
    CHECK(fwd.max_f == doctest::Approx(rev.max_f).epsilon(1e-12));
    CHECK(fwd.weighted_f == doctest::Approx(rev.weighted_f).epsilon(1e-12));
    CHECK(fwd.s_measure == doctest::Approx(rev.s_measure).epsilon(1e-12));
    CHECK(fwd.e_measure == doctest::Approx(rev.e_measure).epsilon(1e-12));
}

TEST_CASE("per-image curve protocol averages the maxima instead") {
    sodkd::Rng rng(13);
    std::vector<Grid> preds{soft_map(8, 8, rng), soft_map(8, 8, rng)};
    std::vector<Grid> gts{random_mask(8, 8, rng, 0.4), random_mask(8, 8, rng, 0.4)};
    auto avg = sodkd::evaluate_dataset(preds, gts, sodkd::CurveProtocol::kAveragedCurve);
    auto per = sodkd::evaluate_dataset(preds, gts, sodkd::CurveProtocol::kPerImage);
    auto c1 = sodkd::f_curve(preds[0], gts[0]);
    auto c2 = sodkd::f_curve(preds[1], gts[1]);
    double m1 = *std::max_element(c1.begin(), c1.end());
    double m2 = *std::max_element(c2.begin(), c2.end());
    CHECK(per.max_f == doctest::Approx(0.5 * (m1 + m2)).epsilon(1e-12));
    // averaging curves first can only lower the peak
    CHECK(avg.max_f <= per.max_f + 1e-12);
}

TEST_CASE("evaluate_dataset rejects mismatched or empty inputs") {
    CHECK_THROWS_AS(sodkd::evaluate_dataset({}, {}), std::invalid_argument);
    std::vector<Grid> one{Grid(4, 4, 1, 0.5)};
    CHECK_THROWS_AS(sodkd::evaluate_dataset(one, {}), std::invalid_argument);
}

TEST_CASE("report serializes to the documented CSV columns and to JSON") {
    CHECK(sodkd::report_csv_header() == "dataset,mae,max_f,mean_f,wf,s,e");
    sodkd::MetricReport r;
    r.mae = 0.125;
    r.max_f = 0.5;
    r.mean_f = 0.25;
    r.weighted_f = 0.75;
    r.s_measure = 1.0;
    r.e_measure = 0.0625;
    r.f_curve.assign(256, 0.25);
    CHECK(sodkd::report_csv_row("test", r) == "test,0.125,0.5,0.25,0.75,1,0.0625");
    auto j = nlohmann::json::parse(sodkd::report_json(r));
    CHECK(j["mae"] == 0.125);
    CHECK(j["weighted_f"] == 0.75);
    CHECK(j["f_curve"].size() == 256);
}
