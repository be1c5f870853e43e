#pragma once

#include <cstddef>
#include <vector>

#include "sodkd/errors.hpp"

namespace sodkd {

// Dense H x W x C field of doubles, row-major with channels innermost:
// index(y, x, c) = (y * width + x) * channels + c.
// Images, feature maps and prediction maps are all Grids; a scalar is 1x1x1.
// A zero-channel grid is permitted (empty concat operand).
struct Grid {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> data;

    Grid() = default;

    Grid(int h, int w, int c, double fill = 0.0)
        : height(h), width(w), channels(c),
          data(static_cast<std::size_t>(check_dims(h, w, c)), fill) {}

    static Grid from(int h, int w, int c, std::vector<double> values);

    std::size_t size() const { return data.size(); }

    double& at(int y, int x, int c) {
        return data[static_cast<std::size_t>((y * width + x) * channels + c)];
    }
    double at(int y, int x, int c) const {
        return data[static_cast<std::size_t>((y * width + x) * channels + c)];
    }

    bool same_shape(const Grid& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }

    bool all_finite() const;

    // In-place axpy: this += a * other. Shapes must match.
    void add_scaled(const Grid& other, double a);

private:
    static long long check_dims(int h, int w, int c);
};

inline Grid scalar_grid(double v) {
    Grid g(1, 1, 1);
    g.data[0] = v;
    return g;
}

// Stable logistic function.
double sigmoid(double z);

// Elementwise sigmoid (no tape involvement); logits -> probability map.
Grid sigmoid_map(const Grid& logits);

// Inverse of sigmoid with clamping so that probabilities from an external
// model can be mapped back to finite logits.
Grid logit_map(const Grid& probabilities);

// Dihedral transforms used by data augmentation. Rotations require square
// grids. Codes 0..7: bit 2 = transpose (rotate), bits 0/1 = h/v flip.
Grid dihedral_transform(const Grid& g, int code);

}  // namespace sodkd
