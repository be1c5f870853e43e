#include "sodkd/distill.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <utility>

namespace sodkd {

namespace {

constexpr double kLogClamp = 1e-12;

double clamp01(double v) {
    if (v < kLogClamp) return kLogClamp;
    if (v > 1.0 - kLogClamp) return 1.0 - kLogClamp;
    return v;
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

}  // namespace

void DistillConfig::validate() const {
    if (p < 0.0 || p > 1.0) throw std::invalid_argument("distill: p must be in [0,1]");
    if (!(temperature > 0.0)) throw std::invalid_argument("distill: temperature must be > 0");
    if (threshold < 0.0 || threshold > 1.0) {
        throw std::invalid_argument("distill: threshold must be in [0,1]");
    }
    if (!(epsilon > 0.0) || epsilon >= threshold) {
        throw std::invalid_argument("distill: epsilon must lie in (0, threshold)");
    }
}

double soft_iou(const Grid& p, const Grid& g) {
    if (!p.same_shape(g)) throw ShapeError("soft_iou: shape mismatch");
    double inter = 0.0, sp = 0.0, sg = 0.0;
    for (std::size_t i = 0; i < p.data.size(); ++i) {
        const double pv = p.data[i];
        const double gv = g.data[i];
        if (pv < 0.0 || pv > 1.0) {
            throw std::invalid_argument("soft_iou: prediction value outside [0,1]");
        }
        if (gv != 0.0 && gv != 1.0) {
            throw std::invalid_argument("soft_iou: mask value not binary");
        }
        inter += pv * gv;
        sp += pv;
        sg += gv;
    }
    const double denom = sp + sg - inter;
    if (denom == 0.0) return 0.0;
    return inter / denom;
}

double alpha_t(const Grid& p_t, const Grid& g) { return soft_iou(p_t, g); }

double beta_s(const Grid& p_s, const Grid& g) { return 1.0 - soft_iou(p_s, g); }

ThetaResult theta(double alpha, double beta, const DistillConfig& cfg) {
    if (alpha > cfg.threshold) {
        // std::pow already gives 0^0 = 1
        return {std::tanh(std::pow(alpha, cfg.p) * std::pow(beta, 1.0 - cfg.p)), false};
    }
    return {cfg.epsilon, true};
}

NodeId ce_loss(Tape& tape, NodeId student_logits, const Grid& g) {
    const Grid& z = tape.value(student_logits);
    if (!z.same_shape(g)) throw ShapeError("ce_loss: shape mismatch");
    const double n = static_cast<double>(z.data.size());
    Grid prob = sigmoid_map(z);
    double total = 0.0;
    for (std::size_t i = 0; i < z.data.size(); ++i) {
        const double pv = clamp01(prob.data[i]);
        total -= g.data[i] * std::log(pv) + (1.0 - g.data[i]) * std::log(1.0 - pv);
    }
    return tape.emplace(
        scalar_grid(total / n), {student_logits},
        [student_logits, prob = std::move(prob), mask = g, n](Tape& t, NodeId self) {
            const double go = t.grad(self).data[0];
            Grid& dz = t.grad_mut(student_logits);
            for (std::size_t i = 0; i < dz.data.size(); ++i) {
                dz.data[i] += go * (prob.data[i] - mask.data[i]) / n;
            }
        });
}

NodeId kl_loss(Tape& tape, NodeId student_logits, const Grid& teacher_logits, double temperature,
               bool t2_scaling) {
    const Grid& z = tape.value(student_logits);
    if (!z.same_shape(teacher_logits)) throw ShapeError("kl_loss: shape mismatch");
    if (!(temperature > 0.0)) throw std::invalid_argument("kl_loss: temperature must be > 0");
    const double n = static_cast<double>(z.data.size());
    const double scale = t2_scaling ? temperature * temperature : 1.0;

    Grid q(z.height, z.width, z.channels);
    Grid s(z.height, z.width, z.channels);
    double total = 0.0;
    for (std::size_t i = 0; i < z.data.size(); ++i) {
        q.data[i] = sigmoid(teacher_logits.data[i] / temperature);
        s.data[i] = sigmoid(z.data[i] / temperature);
        const double qc = clamp01(q.data[i]);
        const double sc = clamp01(s.data[i]);
        total += qc * std::log(qc / sc) + (1.0 - qc) * std::log((1.0 - qc) / (1.0 - sc));
    }
    return tape.emplace(scalar_grid(total / n * scale), {student_logits},
                        [student_logits, q = std::move(q), s = std::move(s), n, temperature,
                         scale](Tape& t, NodeId self) {
                            // d/dz_s KL = (s - q) / T per pixel, before mean and T^2
                            const double go = t.grad(self).data[0];
                            const double f = go * scale / (n * temperature);
                            Grid& dz = t.grad_mut(student_logits);
                            for (std::size_t i = 0; i < dz.data.size(); ++i) {
                                dz.data[i] += f * (s.data[i] - q.data[i]);
                            }
                        });
}

DynamicLossResult dynamic_loss(Tape& tape, NodeId student_logits, const Grid& teacher_logits,
                               const Grid& g, const DistillConfig& cfg, long long iteration,
                               const std::string& sample_id,
                               std::optional<double> theta_override) {
    cfg.validate();
    const Grid& z = tape.value(student_logits);
    if (!z.same_shape(teacher_logits) || !z.same_shape(g)) {
        throw ShapeError("dynamic_loss: shape mismatch");
    }

    WeightTrace trace;
    trace.iteration = iteration;
    trace.sample_id = sample_id;
    trace.alpha_t = alpha_t(sigmoid_map(teacher_logits), g);
    trace.beta_s = beta_s(sigmoid_map(z), g);
    if (theta_override) {
        trace.theta = *theta_override;
        trace.gated = false;
    } else {
        ThetaResult th = theta(trace.alpha_t, trace.beta_s, cfg);
        trace.theta = th.theta;
        trace.gated = th.gated;
    }

    NodeId kl = kl_loss(tape, student_logits, teacher_logits, cfg.temperature, cfg.kl_t2_scaling);
    NodeId ce = ce_loss(tape, student_logits, g);
    NodeId loss = tape.add(tape.scale(kl, trace.theta), tape.scale(ce, 1.0 - trace.theta));
    return {loss, trace};
}

std::string trace_csv_header() { return "iteration,sample_id,alpha,beta,theta,gated"; }

std::string trace_csv_row(const WeightTrace& row) {
    return std::to_string(row.iteration) + "," + row.sample_id + "," + num(row.alpha_t) + "," +
           num(row.beta_s) + "," + num(row.theta) + "," + (row.gated ? "1" : "0");
}

}  // namespace sodkd
