#include "sodkd/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>
#include <utility>

#include "sodkd/rng.hpp"

namespace sodkd {

NodeId Tape::push(Grid value, std::vector<NodeId> inputs, BackwardFn fn) {
    Node n;
    n.grad = Grid(value.height, value.width, value.channels);
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::leaf(Grid value, bool trainable) {
    NodeId id = push(std::move(value), {}, nullptr);
    if (trainable) params_.push_back(id);
    return id;
}

NodeId Tape::conv2d(NodeId input, NodeId kernel, NodeId bias) {
    const Grid& in = value(input);
    const Grid& k = value(kernel);
    const Grid& b = value(bias);
    const int cin = in.channels;
    const int cout = b.channels;
    if (b.height != 1 || b.width != 1) throw ShapeError("conv2d: bias must be 1x1xCout");
    if (k.height != 3 || k.width != 3 || k.channels != cin * cout) {
        throw ShapeError("conv2d: kernel must be 3x3x(Cin*Cout), got " +
                         std::to_string(k.height) + "x" + std::to_string(k.width) + "x" +
                         std::to_string(k.channels) + " for Cin=" + std::to_string(cin) +
                         " Cout=" + std::to_string(cout));
    }
    const int h = in.height, w = in.width;
    Grid out(h, w, cout);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double* orow = &out.data[static_cast<std::size_t>((y * w + x) * cout)];
            for (int co = 0; co < cout; ++co) orow[co] = b.data[static_cast<std::size_t>(co)];
            for (int ky = -1; ky <= 1; ++ky) {
                const int sy = y + ky;
                if (sy < 0 || sy >= h) continue;
                for (int kx = -1; kx <= 1; ++kx) {
                    const int sx = x + kx;
                    if (sx < 0 || sx >= w) continue;
                    const double* irow = &in.data[static_cast<std::size_t>((sy * w + sx) * cin)];
                    const double* kbase =
                        &k.data[static_cast<std::size_t>(((ky + 1) * 3 + (kx + 1)) * cin * cout)];
                    for (int ci = 0; ci < cin; ++ci) {
                        const double iv = irow[ci];
                        const double* krow = kbase + static_cast<std::size_t>(ci) * cout;
                        for (int co = 0; co < cout; ++co) orow[co] += iv * krow[co];
                    }
                }
            }
        }
    }
    return push(std::move(out), {input, kernel, bias}, [=](Tape& t, NodeId self) {
        const Grid& gin = t.value(input);
        const Grid& gk = t.value(kernel);
        const Grid& gout = t.grad(self);
        Grid& din = t.grad_mut(input);
        Grid& dk = t.grad_mut(kernel);
        Grid& db = t.grad_mut(bias);
        const int ch = gin.height, cw = gin.width;
        const int ncin = gin.channels, ncout = db.channels;
        // pass 1: kernel and bias gradients (contiguous over co)
        for (int y = 0; y < ch; ++y) {
            for (int x = 0; x < cw; ++x) {
                const double* grow = &gout.data[static_cast<std::size_t>((y * cw + x) * ncout)];
                for (int co = 0; co < ncout; ++co) db.data[static_cast<std::size_t>(co)] += grow[co];
                for (int ky = -1; ky <= 1; ++ky) {
                    const int sy = y + ky;
                    if (sy < 0 || sy >= ch) continue;
                    for (int kx = -1; kx <= 1; ++kx) {
                        const int sx = x + kx;
                        if (sx < 0 || sx >= cw) continue;
                        const std::size_t ibase = static_cast<std::size_t>((sy * cw + sx) * ncin);
                        const std::size_t kbase =
                            static_cast<std::size_t>(((ky + 1) * 3 + (kx + 1)) * ncin * ncout);
                        for (int ci = 0; ci < ncin; ++ci) {
                            double* dkrow = &dk.data[kbase + static_cast<std::size_t>(ci) * ncout];
                            const double iv = gin.data[ibase + static_cast<std::size_t>(ci)];
                            for (int co = 0; co < ncout; ++co) dkrow[co] += iv * grow[co];
                        }
                    }
                }
            }
        }
        // pass 2: input gradient via a (tap, co, ci) transposed kernel so the
        // inner loop updates contiguous ci without a reduction dependency
        std::vector<double> kt(static_cast<std::size_t>(9) * ncout * ncin);
        for (int tap = 0; tap < 9; ++tap) {
            for (int ci = 0; ci < ncin; ++ci) {
                for (int co = 0; co < ncout; ++co) {
                    kt[static_cast<std::size_t>((tap * ncout + co) * ncin + ci)] =
                        gk.data[static_cast<std::size_t>((tap * ncin + ci) * ncout + co)];
                }
            }
        }
        for (int y = 0; y < ch; ++y) {
            for (int x = 0; x < cw; ++x) {
                const double* grow = &gout.data[static_cast<std::size_t>((y * cw + x) * ncout)];
                for (int ky = -1; ky <= 1; ++ky) {
                    const int sy = y + ky;
                    if (sy < 0 || sy >= ch) continue;
                    for (int kx = -1; kx <= 1; ++kx) {
                        const int sx = x + kx;
                        if (sx < 0 || sx >= cw) continue;
                        double* drow = &din.data[static_cast<std::size_t>((sy * cw + sx) * ncin)];
                        const double* ktap =
                            &kt[static_cast<std::size_t>(((ky + 1) * 3 + (kx + 1)) * ncout) * ncin];
                        for (int co = 0; co < ncout; ++co) {
                            const double gv = grow[co];
                            const double* krow = ktap + static_cast<std::size_t>(co) * ncin;
                            for (int ci = 0; ci < ncin; ++ci) drow[ci] += gv * krow[ci];
                        }
                    }
                }
            }
        }
    });
}

NodeId Tape::relu(NodeId x) {
    const Grid& in = value(x);
    Grid out(in.height, in.width, in.channels);
    for (std::size_t i = 0; i < in.data.size(); ++i) out.data[i] = in.data[i] > 0.0 ? in.data[i] : 0.0;
    return push(std::move(out), {x}, [=](Tape& t, NodeId self) {
        const Grid& gin = t.value(x);
        const Grid& gout = t.grad(self);
        Grid& dx = t.grad_mut(x);
        for (std::size_t i = 0; i < dx.data.size(); ++i) {
            if (gin.data[i] > 0.0) dx.data[i] += gout.data[i];
        }
    });
}

NodeId Tape::sigmoid(NodeId x) {
    const Grid& in = value(x);
    Grid out(in.height, in.width, in.channels);
    for (std::size_t i = 0; i < in.data.size(); ++i) out.data[i] = sodkd::sigmoid(in.data[i]);
    return push(std::move(out), {x}, [=](Tape& t, NodeId self) {
        const Grid& v = t.value(self);
        const Grid& gout = t.grad(self);
        Grid& dx = t.grad_mut(x);
        for (std::size_t i = 0; i < dx.data.size(); ++i) {
            dx.data[i] += gout.data[i] * v.data[i] * (1.0 - v.data[i]);
        }
    });
}

NodeId Tape::add(NodeId a, NodeId b) {
    const Grid& va = value(a);
    const Grid& vb = value(b);
    if (!va.same_shape(vb)) throw ShapeError("add: shape mismatch");
    Grid out(va.height, va.width, va.channels);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = va.data[i] + vb.data[i];
    return push(std::move(out), {a, b}, [=](Tape& t, NodeId self) {
        const Grid& gout = t.grad(self);
        t.grad_mut(a).add_scaled(gout, 1.0);
        t.grad_mut(b).add_scaled(gout, 1.0);
    });
}

NodeId Tape::mul(NodeId a, NodeId b) {
    const Grid& va = value(a);
    const Grid& vb = value(b);
    if (!va.same_shape(vb)) throw ShapeError("mul: shape mismatch");
    Grid out(va.height, va.width, va.channels);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = va.data[i] * vb.data[i];
    return push(std::move(out), {a, b}, [=](Tape& t, NodeId self) {
        const Grid& gout = t.grad(self);
        const Grid& ga = t.value(a);
        const Grid& gb = t.value(b);
        Grid& da = t.grad_mut(a);
        Grid& db = t.grad_mut(b);
        for (std::size_t i = 0; i < gout.data.size(); ++i) {
            da.data[i] += gout.data[i] * gb.data[i];
            db.data[i] += gout.data[i] * ga.data[i];
        }
    });
}

NodeId Tape::scale(NodeId x, double factor) {
    const Grid& in = value(x);
    Grid out(in.height, in.width, in.channels);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = factor * in.data[i];
    return push(std::move(out), {x}, [=](Tape& t, NodeId self) {
        t.grad_mut(x).add_scaled(t.grad(self), factor);
    });
}

NodeId Tape::down2_max(NodeId x) {
    const Grid& in = value(x);
    if (in.height % 2 != 0 || in.width % 2 != 0) {
        throw ShapeError("down2_max: spatial dims must be even, got " +
                         std::to_string(in.height) + "x" + std::to_string(in.width));
    }
    const int oh = in.height / 2, ow = in.width / 2, c = in.channels;
    Grid out(oh, ow, c);
    // Flat input index of the chosen maximum per output element; ties go to
    // the first candidate in row-major block order so backward is stable.
    std::vector<std::int32_t> argmax(out.data.size());
    for (int y = 0; y < oh; ++y) {
        for (int x2 = 0; x2 < ow; ++x2) {
            for (int ch = 0; ch < c; ++ch) {
                double best = -std::numeric_limits<double>::infinity();
                std::int32_t besti = -1;
                for (int dy = 0; dy < 2; ++dy) {
                    for (int dx = 0; dx < 2; ++dx) {
                        std::int32_t idx = ((2 * y + dy) * in.width + (2 * x2 + dx)) * c + ch;
                        double v = in.data[static_cast<std::size_t>(idx)];
                        if (v > best) {
                            best = v;
                            besti = idx;
                        }
                    }
                }
                std::size_t oi = static_cast<std::size_t>((y * ow + x2) * c + ch);
                out.data[oi] = best;
                argmax[oi] = besti;
            }
        }
    }
    return push(std::move(out), {x},
                [x, argmax = std::move(argmax)](Tape& t, NodeId self) {
                    const Grid& gout = t.grad(self);
                    Grid& dx = t.grad_mut(x);
                    for (std::size_t i = 0; i < gout.data.size(); ++i) {
                        dx.data[static_cast<std::size_t>(argmax[i])] += gout.data[i];
                    }
                });
}

NodeId Tape::up2_nearest(NodeId x) {
    const Grid& in = value(x);
    const int oh = in.height * 2, ow = in.width * 2, c = in.channels;
    Grid out(oh, ow, c);
    for (int y = 0; y < oh; ++y) {
        for (int x2 = 0; x2 < ow; ++x2) {
            const double* src = &in.data[static_cast<std::size_t>(((y / 2) * in.width + x2 / 2) * c)];
            double* dst = &out.data[static_cast<std::size_t>((y * ow + x2) * c)];
            std::copy(src, src + c, dst);
        }
    }
    return push(std::move(out), {x}, [=](Tape& t, NodeId self) {
        const Grid& gout = t.grad(self);
        Grid& dx = t.grad_mut(x);
        const int ih = dx.height, iw = dx.width, ic = dx.channels;
        for (int y = 0; y < ih * 2; ++y) {
            for (int x2 = 0; x2 < iw * 2; ++x2) {
                const double* g = &gout.data[static_cast<std::size_t>((y * iw * 2 + x2) * ic)];
                double* d = &dx.data[static_cast<std::size_t>(((y / 2) * iw + x2 / 2) * ic)];
                for (int ch = 0; ch < ic; ++ch) d[ch] += g[ch];
            }
        }
    });
}

NodeId Tape::concat_channels(NodeId a, NodeId b) {
    const Grid& va = value(a);
    const Grid& vb = value(b);
    if (va.height != vb.height || va.width != vb.width) {
        throw ShapeError("concat_channels: spatial dims differ");
    }
    const int ca = va.channels, cb = vb.channels;
    Grid out(va.height, va.width, ca + cb);
    for (int i = 0; i < va.height * va.width; ++i) {
        double* dst = &out.data[static_cast<std::size_t>(i * (ca + cb))];
        std::copy(&va.data[static_cast<std::size_t>(i * ca)],
                  &va.data[static_cast<std::size_t>(i * ca)] + ca, dst);
        std::copy(&vb.data[static_cast<std::size_t>(i * cb)],
                  &vb.data[static_cast<std::size_t>(i * cb)] + cb, dst + ca);
    }
    return push(std::move(out), {a, b}, [=](Tape& t, NodeId self) {
        const Grid& gout = t.grad(self);
        Grid& da = t.grad_mut(a);
        Grid& db = t.grad_mut(b);
        const int n = da.height * da.width;
        for (int i = 0; i < n; ++i) {
            const double* g = &gout.data[static_cast<std::size_t>(i * (ca + cb))];
            for (int ch = 0; ch < ca; ++ch) da.data[static_cast<std::size_t>(i * ca + ch)] += g[ch];
            for (int ch = 0; ch < cb; ++ch) db.data[static_cast<std::size_t>(i * cb + ch)] += g[ca + ch];
        }
    });
}

NodeId Tape::sum(NodeId x) {
    const Grid& in = value(x);
    double s = 0.0;
    for (double v : in.data) s += v;
    return push(scalar_grid(s), {x}, [=](Tape& t, NodeId self) {
        const double g = t.grad(self).data[0];
        Grid& dx = t.grad_mut(x);
        for (double& v : dx.data) v += g;
    });
}

NodeId Tape::emplace(Grid value, std::vector<NodeId> inputs, BackwardFn fn) {
    return push(std::move(value), std::move(inputs), std::move(fn));
}

void Tape::backward(NodeId loss) {
    const Grid& lv = value(loss);
    if (lv.height != 1 || lv.width != 1 || lv.channels != 1) {
        throw ShapeError("backward: loss node must be scalar (1x1x1)");
    }
    grad_mut(loss).data[0] += 1.0;
    std::vector<char> needed(static_cast<std::size_t>(loss) + 1, 0);
    needed[static_cast<std::size_t>(loss)] = 1;
    for (NodeId i = loss; i >= 0; --i) {
        if (!needed[static_cast<std::size_t>(i)]) continue;
        for (NodeId in : nodes_[static_cast<std::size_t>(i)].inputs) {
            needed[static_cast<std::size_t>(in)] = 1;
        }
    }
    for (NodeId i = loss; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (needed[static_cast<std::size_t>(i)] && n.backward) n.backward(*this, i);
    }
}

bool Tape::all_finite() const {
    for (const Node& n : nodes_) {
        if (!n.value.all_finite() || !n.grad.all_finite()) return false;
    }
    return true;
}

double fd_check(const std::vector<Grid*>& params,
                const std::function<NodeId(Tape&)>& build_loss, double step, int samples,
                std::uint64_t seed) {
    Tape t;
    NodeId loss = build_loss(t);
    if (t.parameters().size() != params.size()) {
        throw ShapeError("fd_check: builder registered " + std::to_string(t.parameters().size()) +
                         " trainable leaves, expected " + std::to_string(params.size()));
    }
    for (std::size_t p = 0; p < params.size(); ++p) {
        if (!t.value(t.parameters()[p]).same_shape(*params[p])) {
            throw ShapeError("fd_check: trainable leaf " + std::to_string(p) +
                             " does not match the supplied grid shape");
        }
    }
    t.backward(loss);

    std::size_t total = 0;
    for (const Grid* g : params) total += g->size();
    if (total == 0) return 0.0;

    // (param index, element offset) pairs; exhaustive when the model is small
    // enough, otherwise sampled without replacement.
    std::vector<std::pair<std::size_t, std::size_t>> picks;
    if (samples < 0 || total <= static_cast<std::size_t>(samples)) {
        for (std::size_t p = 0; p < params.size(); ++p) {
            for (std::size_t j = 0; j < params[p]->size(); ++j) picks.emplace_back(p, j);
        }
    } else {
        Rng rng(seed);
        std::set<std::uint64_t> seen;
        while (seen.size() < static_cast<std::size_t>(samples)) {
            seen.insert(rng.below(total));
        }
        for (std::uint64_t flat : seen) {
            std::size_t p = 0;
            std::uint64_t off = flat;
            while (off >= params[p]->size()) {
                off -= params[p]->size();
                ++p;
            }
            picks.emplace_back(p, static_cast<std::size_t>(off));
        }
    }

    auto eval = [&]() {
        Tape fresh;
        NodeId l = build_loss(fresh);
        return fresh.value(l).data[0];
    };

    double worst = 0.0;
    for (const auto& [p, j] : picks) {
        const double analytic = t.grad(t.parameters()[p]).data[j];
        double& slot = params[p]->data[j];
        const double saved = slot;
        slot = saved + step;
        const double lp = eval();
        slot = saved - step;
        const double lm = eval();
        slot = saved;
        const double fd = (lp - lm) / (2.0 * step);
        const double rel =
            std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-8});
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace sodkd
