#pragma once

#include <string>
#include <vector>

#include "sodkd/grid.hpp"

namespace sodkd {

struct MetricReport {
    double mae = 0.0;
    double max_f = 0.0;
    double mean_f = 0.0;
    double weighted_f = 0.0;
    double s_measure = 0.0;
    double e_measure = 0.0;
    std::vector<double> f_curve;  // one entry per threshold 0..255
};

struct WeightedFOptions {
    // Gaussian dependency window: (2*radius+1)^2 taps. radius 0 plus an
    // infinite decay constant reduces the measure to plain F1.
    int window_radius = 3;
    double sigma = 5.0;
    // foreground-distance decay: B = 2 - exp(ln(0.5)/decay * dist)
    double decay_constant = 5.0;
};

// Mean absolute difference, 1/(W*H) * sum |S - G|.
double mae(const Grid& s, const Grid& g);

// F-measure after binarizing S strictly above threshold/255.
double f_beta(const Grid& s, const Grid& g, int threshold, double beta2 = 0.3);

// f_beta at every threshold 0..255 via one histogram pass. Matches the
// 256-pass recomputation bit for bit.
std::vector<double> f_curve(const Grid& s, const Grid& g, double beta2 = 0.3);

// Dependency-weighted F-measure: errors near the object count differently
// from isolated ones (Gaussian-weighted neighborhood on the error map,
// distance-decayed importance on the background).
double weighted_f(const Grid& s, const Grid& g, const WeightedFOptions& opt = {});

// Structure measure: 0.5 * object similarity + 0.5 * region similarity
// (region split into quadrants at the mask centroid).
double s_measure(const Grid& s, const Grid& g);

// Enhanced-alignment measure of the map binarized at the adaptive threshold
// min(2*mean(S), 1), averaged over pixels.
double e_measure(const Grid& s, const Grid& g);

enum class CurveProtocol {
    kAveragedCurve,  // max/mean taken on the pointwise-averaged curve
    kPerImage,       // average of per-image maxima / means
};

MetricReport evaluate_dataset(const std::vector<Grid>& predictions, const std::vector<Grid>& gts,
                              CurveProtocol protocol = CurveProtocol::kAveragedCurve);

std::string report_csv_header();
std::string report_csv_row(const std::string& dataset, const MetricReport& r);
std::string report_json(const MetricReport& r);

}  // namespace sodkd
