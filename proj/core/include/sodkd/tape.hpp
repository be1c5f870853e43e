#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "sodkd/grid.hpp"

namespace sodkd {

using NodeId = std::int32_t;

// Reverse-mode tape. Nodes are appended in execution order, so the list is
// already topologically sorted; backward walks it in reverse. Backward
// functions capture node ids, never pointers, so vector growth is harmless.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, NodeId self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) = default;
    Tape& operator=(Tape&&) = default;

    // Records an input grid. Trainable leaves are tracked in registration
    // order and surfaced via parameters().
    NodeId leaf(Grid value, bool trainable = false);

    // kernel is 3x3x(Cin*Cout) with index ci*Cout + co; bias is 1x1xCout.
    NodeId conv2d(NodeId input, NodeId kernel, NodeId bias);

    NodeId relu(NodeId x);
    NodeId sigmoid(NodeId x);
    NodeId add(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId scale(NodeId x, double factor);

    NodeId down2_max(NodeId x);
    NodeId up2_nearest(NodeId x);
    NodeId concat_channels(NodeId a, NodeId b);

    // Scalar 1x1x1 sum of all elements.
    NodeId sum(NodeId x);

    // Custom node with caller-supplied value and backward. Used by the loss
    // functions, which have cheaper analytic gradients than a composed graph.
    NodeId emplace(Grid value, std::vector<NodeId> inputs, BackwardFn fn);

    const Grid& value(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    const Grid& grad(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
    Grid& grad_mut(NodeId id) { return nodes_[static_cast<std::size_t>(id)].grad; }

    // Seeds d(loss)/d(loss) = 1 and accumulates gradients into every node
    // reachable from the loss. Throws ShapeError if loss is not 1x1x1.
    void backward(NodeId loss);

    const std::vector<NodeId>& parameters() const { return params_; }
    std::size_t size() const { return nodes_.size(); }

    // True when every recorded value and gradient is finite.
    bool all_finite() const;

private:
    struct Node {
        Grid value;
        Grid grad;
        std::vector<NodeId> inputs;
        BackwardFn backward;
    };

    NodeId push(Grid value, std::vector<NodeId> inputs, BackwardFn fn);

    std::vector<Node> nodes_;
    std::vector<NodeId> params_;
};

// Central-difference gradient verification.
//
// `build_loss` must construct the graph on the given tape, registering one
// trainable leaf per entry of `params` (same order, values copied from the
// pointed-to grids) and return the scalar loss node. fd_check perturbs the
// underlying grids between rebuilds, so the builder has to re-read them.
// Returns max over sampled elements of
//   |analytic - fd| / max(|analytic|, |fd|, 1e-8).
double fd_check(const std::vector<Grid*>& params,
                const std::function<NodeId(Tape&)>& build_loss, double step,
                int samples = 50, std::uint64_t seed = 1);

}  // namespace sodkd
