#include "sodkd/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "json.hpp"
#include "sodkd/errors.hpp"

namespace sodkd {

namespace {

void check_pair(const Grid& s, const Grid& g, const char* who) {
    if (!s.same_shape(g)) throw ShapeError(std::string(who) + ": shape mismatch");
    if (s.channels != 1) throw ShapeError(std::string(who) + ": expected single-channel maps");
    for (double v : g.data) {
        if (v != 0.0 && v != 1.0) {
            throw std::invalid_argument(std::string(who) + ": mask value not binary");
        }
    }
}

double mask_sum(const Grid& g) {
    double s = 0.0;
    for (double v : g.data) s += v;
    return s;
}

// shared by f_beta and f_curve so the fast path is bit-identical
double f_from_counts(double tp, double fp, double gsum, double predsum, double beta2) {
    if (gsum == 0.0) return predsum == 0.0 ? 1.0 : 0.0;
    const double precision = (tp + fp) > 0.0 ? tp / (tp + fp) : 0.0;
    const double recall = tp / gsum;
    const double denom = beta2 * precision + recall;
    if (denom == 0.0) return 0.0;
    return (1.0 + beta2) * precision * recall / denom;
}

const std::array<double, 256>& threshold_table() {
    static const std::array<double, 256> table = [] {
        std::array<double, 256> t{};
        for (int i = 0; i < 256; ++i) t[static_cast<std::size_t>(i)] = i / 255.0;
        return t;
    }();
    return table;
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

}  // namespace

double mae(const Grid& s, const Grid& g) {
    check_pair(s, g, "mae");
    double total = 0.0;
    for (std::size_t i = 0; i < s.data.size(); ++i) total += std::abs(s.data[i] - g.data[i]);
    return total / static_cast<double>(s.data.size());
}

double f_beta(const Grid& s, const Grid& g, int threshold, double beta2) {
    check_pair(s, g, "f_beta");
    if (threshold < 0 || threshold > 255) {
        throw std::invalid_argument("f_beta: threshold must be in 0..255");
    }
    const double cut = threshold_table()[static_cast<std::size_t>(threshold)];
    double tp = 0.0, fp = 0.0, predsum = 0.0;
    for (std::size_t i = 0; i < s.data.size(); ++i) {
        if (s.data[i] > cut) {
            predsum += 1.0;
            if (g.data[i] == 1.0) tp += 1.0;
            else fp += 1.0;
        }
    }
    return f_from_counts(tp, fp, mask_sum(g), predsum, beta2);
}

std::vector<double> f_curve(const Grid& s, const Grid& g, double beta2) {
    check_pair(s, g, "f_curve");
    const auto& table = threshold_table();
    // count, per pixel, how many thresholds it clears; then a suffix sum over
    // the histogram gives tp/fp at every threshold in one pass
    std::array<double, 257> fg_hist{}, bg_hist{};
    for (std::size_t i = 0; i < s.data.size(); ++i) {
        const auto m = static_cast<std::size_t>(
            std::lower_bound(table.begin(), table.end(), s.data[i]) - table.begin());
        if (g.data[i] == 1.0) fg_hist[m] += 1.0;
        else bg_hist[m] += 1.0;
    }
    std::array<double, 258> fg_suffix{}, bg_suffix{};
    for (int m = 256; m >= 0; --m) {
        fg_suffix[static_cast<std::size_t>(m)] =
            fg_suffix[static_cast<std::size_t>(m) + 1] + fg_hist[static_cast<std::size_t>(m)];
        bg_suffix[static_cast<std::size_t>(m)] =
            bg_suffix[static_cast<std::size_t>(m) + 1] + bg_hist[static_cast<std::size_t>(m)];
    }
    const double gsum = mask_sum(g);
    std::vector<double> curve(256);
    for (int t = 0; t < 256; ++t) {
        const double tp = fg_suffix[static_cast<std::size_t>(t) + 1];
        const double fp = bg_suffix[static_cast<std::size_t>(t) + 1];
        curve[static_cast<std::size_t>(t)] = f_from_counts(tp, fp, gsum, tp + fp, beta2);
    }
    return curve;
}

double weighted_f(const Grid& s, const Grid& g, const WeightedFOptions& opt) {
    check_pair(s, g, "weighted_f");
    const int h = s.height, w = s.width;
    const std::size_t n = s.data.size();
    const double gsum = mask_sum(g);
    if (gsum == 0.0) {
        for (double v : s.data) {
            if (v != 0.0) return 0.0;
        }
        return 1.0;
    }

    // nearest foreground pixel (exact euclidean, ties to the first in
    // row-major order) for every background pixel
    std::vector<std::pair<int, int>> fg;
    fg.reserve(static_cast<std::size_t>(gsum));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (g.at(y, x, 0) == 1.0) fg.emplace_back(y, x);
        }
    }
    std::vector<double> dist(n, 0.0);
    std::vector<std::size_t> nearest(n, 0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y * w + x);
            if (g.data[i] == 1.0) {
                nearest[i] = i;
                continue;
            }
            long long best = -1;
            std::size_t besti = 0;
            for (const auto& [fy, fx] : fg) {
                const long long dy = fy - y, dx = fx - x;
                const long long d2 = dy * dy + dx * dx;
                if (best < 0 || d2 < best) {
                    best = d2;
                    besti = static_cast<std::size_t>(fy * w + fx);
                }
            }
            dist[i] = std::sqrt(static_cast<double>(best));
            nearest[i] = besti;
        }
    }

    // absolute error, with background errors replaced by the error at the
    // nearest foreground pixel before smoothing
    std::vector<double> err(n), err_t(n);
    for (std::size_t i = 0; i < n; ++i) err[i] = std::abs(s.data[i] - g.data[i]);
    for (std::size_t i = 0; i < n; ++i) err_t[i] = g.data[i] == 1.0 ? err[i] : err[nearest[i]];

    const int r = opt.window_radius;
    const int side = 2 * r + 1;
    std::vector<double> kernel(static_cast<std::size_t>(side) * side);
    double ksum = 0.0;
    for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
            const double v = std::exp(-(dy * dy + dx * dx) / (2.0 * opt.sigma * opt.sigma));
            kernel[static_cast<std::size_t>((dy + r) * side + (dx + r))] = v;
            ksum += v;
        }
    }
    for (double& v : kernel) v /= ksum;

    std::vector<double> smoothed(n, 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int dy = -r; dy <= r; ++dy) {
                const int sy = y + dy;
                if (sy < 0 || sy >= h) continue;
                for (int dx = -r; dx <= r; ++dx) {
                    const int sx = x + dx;
                    if (sx < 0 || sx >= w) continue;
                    acc += err_t[static_cast<std::size_t>(sy * w + sx)] *
                           kernel[static_cast<std::size_t>((dy + r) * side + (dx + r))];
                }
            }
            smoothed[static_cast<std::size_t>(y * w + x)] = acc;
        }
    }

    // weighted error: foreground may only benefit from smoothing, background
    // errors decay with distance from the object
    const double decay = std::log(0.5) / opt.decay_constant;
    double fg_err = 0.0, bg_err = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (g.data[i] == 1.0) {
            fg_err += std::min(err[i], smoothed[i]);
        } else {
            bg_err += err[i] * (2.0 - std::exp(decay * dist[i]));
        }
    }

    const double tp_w = gsum - fg_err;
    const double recall = 1.0 - fg_err / gsum;
    const double precision = (tp_w + bg_err) > 0.0 ? tp_w / (tp_w + bg_err) : 0.0;
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

namespace {

struct RegionStats {
    double mean_s = 0.0, mean_g = 0.0, var_s = 0.0, var_g = 0.0, cov = 0.0;
    double count = 0.0;
};

RegionStats region_stats(const Grid& s, const Grid& g, int y0, int y1, int x0, int x1) {
    RegionStats r;
    r.count = static_cast<double>((y1 - y0) * (x1 - x0));
    if (r.count == 0.0) return r;
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            r.mean_s += s.at(y, x, 0);
            r.mean_g += g.at(y, x, 0);
        }
    }
    r.mean_s /= r.count;
    r.mean_g /= r.count;
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            const double ds = s.at(y, x, 0) - r.mean_s;
            const double dg = g.at(y, x, 0) - r.mean_g;
            r.var_s += ds * ds;
            r.var_g += dg * dg;
            r.cov += ds * dg;
        }
    }
    const double denom = r.count > 1.0 ? r.count - 1.0 : 1.0;
    r.var_s /= denom;
    r.var_g /= denom;
    r.cov /= denom;
    return r;
}

double ssim_region(const Grid& s, const Grid& g, int y0, int y1, int x0, int x1) {
    const RegionStats r = region_stats(s, g, y0, y1, x0, x1);
    const double a = 4.0 * r.mean_s * r.mean_g * r.cov;
    const double b = (r.mean_s * r.mean_s + r.mean_g * r.mean_g) * (r.var_s + r.var_g);
    if (b == 0.0) return a == 0.0 ? 1.0 : 0.0;
    return a / b;
}

double object_score(double mean, double stddev) {
    return 2.0 * mean / (mean * mean + 1.0 + stddev);
}

}  // namespace

double s_measure(const Grid& s, const Grid& g) {
    check_pair(s, g, "s_measure");
    const double n = static_cast<double>(g.data.size());
    const double gmean = mask_sum(g) / n;
    double smean = 0.0;
    for (double v : s.data) smean += v;
    smean /= n;
    if (gmean == 0.0) return 1.0 - smean;
    if (gmean == 1.0) return smean;

    // object term: prediction restricted to mask, complement restricted to
    // background, each scored by mean and spread
    double fsum = 0.0, bsum = 0.0;
    const double fg_n = gmean * n, bg_n = n - fg_n;
    for (std::size_t i = 0; i < s.data.size(); ++i) {
        if (g.data[i] == 1.0) fsum += s.data[i];
        else bsum += 1.0 - s.data[i];
    }
    const double fmean = fsum / fg_n;
    const double bmean = bsum / bg_n;
    double fdev = 0.0, bdev = 0.0;
    for (std::size_t i = 0; i < s.data.size(); ++i) {
        if (g.data[i] == 1.0) {
            fdev += (s.data[i] - fmean) * (s.data[i] - fmean);
        } else {
            bdev += (1.0 - s.data[i] - bmean) * (1.0 - s.data[i] - bmean);
        }
    }
    const double fvar = fg_n > 1.0 ? fdev / (fg_n - 1.0) : 0.0;
    const double bvar = bg_n > 1.0 ? bdev / (bg_n - 1.0) : 0.0;
    const double s_object =
        gmean * object_score(fmean, std::sqrt(fvar)) + (1.0 - gmean) * object_score(bmean, std::sqrt(bvar));

    // region term: quadrants around the mask centroid, area-weighted
    double cy = 0.0, cx = 0.0, cnt = 0.0;
    for (int y = 0; y < g.height; ++y) {
        for (int x = 0; x < g.width; ++x) {
            if (g.at(y, x, 0) == 1.0) {
                cy += y;
                cx += x;
                cnt += 1.0;
            }
        }
    }
    const int split_y = static_cast<int>(std::round(cy / cnt)) + 1;
    const int split_x = static_cast<int>(std::round(cx / cnt)) + 1;
    const double w1 = static_cast<double>(split_y * split_x) / n;
    const double w2 = static_cast<double>(split_y * (g.width - split_x)) / n;
    const double w3 = static_cast<double>((g.height - split_y) * split_x) / n;
    const double w4 = static_cast<double>((g.height - split_y) * (g.width - split_x)) / n;
    const double s_region = w1 * ssim_region(s, g, 0, split_y, 0, split_x) +
                            w2 * ssim_region(s, g, 0, split_y, split_x, g.width) +
                            w3 * ssim_region(s, g, split_y, g.height, 0, split_x) +
                            w4 * ssim_region(s, g, split_y, g.height, split_x, g.width);

    return std::max(0.0, 0.5 * s_object + 0.5 * s_region);
}

double e_measure(const Grid& s, const Grid& g) {
    check_pair(s, g, "e_measure");
    const double n = static_cast<double>(s.data.size());
    double smean = 0.0;
    for (double v : s.data) smean += v;
    smean /= n;
    const double cut = std::min(2.0 * smean, 1.0);

    std::vector<double> fm(s.data.size());
    double fm_mean = 0.0;
    for (std::size_t i = 0; i < s.data.size(); ++i) {
        fm[i] = s.data[i] >= cut ? 1.0 : 0.0;
        fm_mean += fm[i];
    }
    fm_mean /= n;
    const double gmean = mask_sum(g) / n;

    double total = 0.0;
    if (gmean == 0.0) {
        for (double v : fm) total += 1.0 - v;
    } else if (gmean == 1.0) {
        for (double v : fm) total += v;
    } else {
        for (std::size_t i = 0; i < s.data.size(); ++i) {
            const double a = g.data[i] - gmean;
            const double b = fm[i] - fm_mean;
            const double d = a * a + b * b;
            const double align = d == 0.0 ? 0.0 : 2.0 * a * b / d;
            total += (align + 1.0) * (align + 1.0) / 4.0;
        }
    }
    return total / n;
}

MetricReport evaluate_dataset(const std::vector<Grid>& predictions, const std::vector<Grid>& gts,
                              CurveProtocol protocol) {
    if (predictions.size() != gts.size()) {
        throw std::invalid_argument("evaluate_dataset: prediction/mask count mismatch");
    }
    if (predictions.empty()) throw std::invalid_argument("evaluate_dataset: empty dataset");

    const double n = static_cast<double>(predictions.size());
    MetricReport r;
    r.f_curve.assign(256, 0.0);
    double max_acc = 0.0, mean_acc = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        r.mae += mae(predictions[i], gts[i]);
        r.weighted_f += weighted_f(predictions[i], gts[i]);
        r.s_measure += s_measure(predictions[i], gts[i]);
        r.e_measure += e_measure(predictions[i], gts[i]);
        const std::vector<double> curve = f_curve(predictions[i], gts[i]);
        double cmax = 0.0, cmean = 0.0;
        for (int t = 0; t < 256; ++t) {
            r.f_curve[static_cast<std::size_t>(t)] += curve[static_cast<std::size_t>(t)] / n;
            cmax = std::max(cmax, curve[static_cast<std::size_t>(t)]);
            cmean += curve[static_cast<std::size_t>(t)] / 256.0;
        }
        max_acc += cmax;
        mean_acc += cmean;
    }
    r.mae /= n;
    r.weighted_f /= n;
    r.s_measure /= n;
    r.e_measure /= n;
    if (protocol == CurveProtocol::kPerImage) {
        r.max_f = max_acc / n;
        r.mean_f = mean_acc / n;
    } else {
        r.max_f = *std::max_element(r.f_curve.begin(), r.f_curve.end());
        double m = 0.0;
        for (double v : r.f_curve) m += v;
        r.mean_f = m / 256.0;
    }
    return r;
}

std::string report_csv_header() { return "dataset,mae,max_f,mean_f,wf,s,e"; }

std::string report_csv_row(const std::string& dataset, const MetricReport& r) {
    return dataset + "," + num(r.mae) + "," + num(r.max_f) + "," + num(r.mean_f) + "," +
           num(r.weighted_f) + "," + num(r.s_measure) + "," + num(r.e_measure);
}

std::string report_json(const MetricReport& r) {
    nlohmann::json j;
    j["mae"] = r.mae;
    j["max_f"] = r.max_f;
    j["mean_f"] = r.mean_f;
    j["weighted_f"] = r.weighted_f;
    j["s_measure"] = r.s_measure;
    j["e_measure"] = r.e_measure;
    j["f_curve"] = r.f_curve;
    return j.dump(2);
}

}  // namespace sodkd
