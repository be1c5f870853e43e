#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sodkd/grid.hpp"
#include "sodkd/tape.hpp"

namespace sodkd {

struct DistillConfig {
    double p = 0.7;
    double temperature = 5.0;
    double threshold = 0.5;
    double epsilon = 0.01;
    // Multiply the distillation loss by T^2 so its gradient scale stays
    // comparable to the plain cross-entropy term across temperatures.
    bool kl_t2_scaling = true;

    void validate() const;
};

// One row of the per-sample weighting history a training run records.
struct WeightTrace {
    long long iteration = 0;
    std::string sample_id;
    double alpha_t = 0.0;
    double beta_s = 0.0;
    double theta = 0.0;
    bool gated = false;
};

// Sum(P*G) / (Sum(P) + Sum(G) - Sum(P*G)); 0 when both maps are empty.
// P must lie in [0,1], G must be binary.
double soft_iou(const Grid& p, const Grid& g);

// Teacher confidence on this sample.
double alpha_t(const Grid& p_t, const Grid& g);

// Student error rate on this sample: 1 - soft_iou.
double beta_s(const Grid& p_s, const Grid& g);

struct ThetaResult {
    double theta;
    bool gated;
};

// tanh(alpha^p * beta^(1-p)) when alpha clears the confidence threshold,
// otherwise the small constant epsilon (the noise gate). 0^0 is taken as 1.
ThetaResult theta(double alpha, double beta, const DistillConfig& cfg);

// Mean per-pixel binary cross-entropy between sigmoid(logits) and the mask.
// Log arguments are clamped to 1e-12.
NodeId ce_loss(Tape& tape, NodeId student_logits, const Grid& g);

// Mean per-pixel KL(teacher || student) between temperature-softened
// Bernoullis, optionally scaled by T^2. The teacher map is a constant:
// gradients reach the student logits only.
NodeId kl_loss(Tape& tape, NodeId student_logits, const Grid& teacher_logits, double temperature,
               bool t2_scaling = true);

struct DynamicLossResult {
    NodeId loss;
    WeightTrace trace;
};

// theta * KL + (1 - theta) * CE with theta computed from the current
// prediction quality and treated as a constant by backward. theta_override
// substitutes a fixed weight (test hook); it skips the gate.
DynamicLossResult dynamic_loss(Tape& tape, NodeId student_logits, const Grid& teacher_logits,
                               const Grid& g, const DistillConfig& cfg, long long iteration = 0,
                               const std::string& sample_id = "",
                               std::optional<double> theta_override = std::nullopt);

std::string trace_csv_header();
std::string trace_csv_row(const WeightTrace& row);

}  // namespace sodkd
