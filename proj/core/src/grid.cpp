#include "sodkd/grid.hpp"

#include <cmath>
#include <string>
#include <utility>

namespace sodkd {

long long Grid::check_dims(int h, int w, int c) {
    if (h < 1 || w < 1 || c < 0) {
        throw ShapeError("grid dimensions out of range: " + std::to_string(h) + "x" +
                         std::to_string(w) + "x" + std::to_string(c));
    }
    return static_cast<long long>(h) * w * c;
}

Grid Grid::from(int h, int w, int c, std::vector<double> values) {
    Grid g;
    long long n = check_dims(h, w, c);
    if (static_cast<long long>(values.size()) != n) {
        throw ShapeError("grid data size " + std::to_string(values.size()) +
                         " does not match " + std::to_string(h) + "x" + std::to_string(w) +
                         "x" + std::to_string(c));
    }
    g.height = h;
    g.width = w;
    g.channels = c;
    g.data = std::move(values);
    return g;
}

bool Grid::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Grid::add_scaled(const Grid& other, double a) {
    if (!same_shape(other)) throw ShapeError("add_scaled: shape mismatch");
    for (std::size_t i = 0; i < data.size(); ++i) data[i] += a * other.data[i];
}

double sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    double e = std::exp(z);
    return e / (1.0 + e);
}

Grid sigmoid_map(const Grid& logits) {
    Grid out(logits.height, logits.width, logits.channels);
    for (std::size_t i = 0; i < logits.data.size(); ++i) out.data[i] = sigmoid(logits.data[i]);
    return out;
}

Grid logit_map(const Grid& probabilities) {
    constexpr double kEps = 1e-12;
    Grid out(probabilities.height, probabilities.width, probabilities.channels);
    for (std::size_t i = 0; i < probabilities.data.size(); ++i) {
        double p = probabilities.data[i];
        if (p < kEps) p = kEps;
        if (p > 1.0 - kEps) p = 1.0 - kEps;
        out.data[i] = std::log(p / (1.0 - p));
    }
    return out;
}

Grid dihedral_transform(const Grid& g, int code) {
    if (code < 0 || code > 7) throw ShapeError("dihedral code must be in [0,7]");
    bool hflip = code & 1;
    bool vflip = code & 2;
    bool transpose = code & 4;
    if (transpose && g.height != g.width) {
        throw ShapeError("dihedral transpose requires a square grid");
    }
    Grid out(g.height, g.width, g.channels);
    for (int y = 0; y < g.height; ++y) {
        for (int x = 0; x < g.width; ++x) {
            int sy = y, sx = x;
            if (transpose) std::swap(sy, sx);
            if (hflip) sx = g.width - 1 - sx;
            if (vflip) sy = g.height - 1 - sy;
            for (int c = 0; c < g.channels; ++c) out.at(y, x, c) = g.at(sy, sx, c);
        }
    }
    return out;
}

}  // namespace sodkd
