#include "sodkd/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>
#include <unordered_map>

#include "json.hpp"

#include "sodkd/errors.hpp"
#include "sodkd/pnm.hpp"
#include "sodkd/rng.hpp"

namespace sodkd {

namespace {

constexpr std::uint64_t kSampleStream = 0x53414d50;  // per-sample seed derivation
constexpr std::uint64_t kPlanStream = 0x504c414e;    // mode assignment and split shuffle

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

struct ShapeSpec {
    bool ellipse = true;
    double cy = 0.0, cx = 0.0;
    double ry = 1.0, rx = 1.0;
    double cos_a = 1.0, sin_a = 0.0;
};

ShapeSpec random_shape(Rng& rng, int size, double rmin, double rmax) {
    ShapeSpec s;
    s.ellipse = rng.below(2) == 0;
    s.cy = rng.uniform(0.15, 0.85) * size;
    s.cx = rng.uniform(0.15, 0.85) * size;
    s.ry = rng.uniform(rmin, rmax) * size;
    s.rx = rng.uniform(rmin, rmax) * size;
    const double angle = rng.uniform(0.0, 3.14159265358979323846);
    s.cos_a = std::cos(angle);
    s.sin_a = std::sin(angle);
    return s;
}

// Anti-aliased coverage in [0,1] via 4x4 supersampling, restricted to the
// shape's bounding box.
Grid shape_coverage(const ShapeSpec& s, int size) {
    Grid cov(size, size, 1);
    const double reach = std::hypot(s.rx, s.ry) + 1.0;
    const int y0 = std::max(0, static_cast<int>(std::floor(s.cy - reach)));
    const int y1 = std::min(size - 1, static_cast<int>(std::ceil(s.cy + reach)));
    const int x0 = std::max(0, static_cast<int>(std::floor(s.cx - reach)));
    const int x1 = std::min(size - 1, static_cast<int>(std::ceil(s.cx + reach)));
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            int hits = 0;
            for (int sy = 0; sy < 4; ++sy) {
                for (int sx = 0; sx < 4; ++sx) {
                    const double py = y + (sy + 0.5) / 4.0 - s.cy;
                    const double px = x + (sx + 0.5) / 4.0 - s.cx;
                    const double u = s.cos_a * px + s.sin_a * py;
                    const double v = -s.sin_a * px + s.cos_a * py;
                    bool inside;
                    if (s.ellipse) {
                        const double eu = u / s.rx, ev = v / s.ry;
                        inside = eu * eu + ev * ev <= 1.0;
                    } else {
                        inside = std::abs(u) <= s.rx && std::abs(v) <= s.ry;
                    }
                    if (inside) ++hits;
                }
            }
            cov.at(y, x, 0) = hits / 16.0;
        }
    }
    return cov;
}

struct Color {
    double r, g, b;
};

// Saturated palette color with one dominant channel.
Color palette_color(Rng& rng) {
    const int dom = static_cast<int>(rng.below(3));
    double c[3];
    for (int i = 0; i < 3; ++i) c[i] = rng.uniform(0.05, 0.50);
    c[dom] = rng.uniform(0.55, 0.95);
    return {c[0], c[1], c[2]};
}

void paint_rgb(Grid& rgb, const Grid& cov, const Color& color, double alpha) {
    for (int y = 0; y < rgb.height; ++y) {
        for (int x = 0; x < rgb.width; ++x) {
            const double a = cov.at(y, x, 0) * alpha;
            if (a <= 0.0) continue;
            rgb.at(y, x, 0) += a * (color.r - rgb.at(y, x, 0));
            rgb.at(y, x, 1) += a * (color.g - rgb.at(y, x, 1));
            rgb.at(y, x, 2) += a * (color.b - rgb.at(y, x, 2));
        }
    }
}

// Smooth background color field: coarse value noise, bilinearly upsampled.
Grid background_rgb(Rng& rng, int size) {
    const int cg = size / 8 + 2;
    std::vector<double> nodes(static_cast<std::size_t>(cg) * cg * 3);
    for (double& v : nodes) v = rng.uniform();
    Grid rgb(size, size, 3);
    for (int y = 0; y < size; ++y) {
        const double fy = y / 8.0;
        const int i0 = static_cast<int>(fy);
        const double wy = fy - i0;
        for (int x = 0; x < size; ++x) {
            const double fx = x / 8.0;
            const int j0 = static_cast<int>(fx);
            const double wx = fx - j0;
            for (int c = 0; c < 3; ++c) {
                auto node = [&](int i, int j) {
                    return nodes[(static_cast<std::size_t>(i) * cg + j) * 3 + c];
                };
                const double top = node(i0, j0) * (1 - wx) + node(i0, j0 + 1) * wx;
                const double bot = node(i0 + 1, j0) * (1 - wx) + node(i0 + 1, j0 + 1) * wx;
                rgb.at(y, x, c) = 0.20 + 0.60 * (top * (1 - wy) + bot * wy);
            }
        }
    }
    return rgb;
}

}  // namespace

std::string to_string(NoiseMode mode) {
    switch (mode) {
        case NoiseMode::kClean: return "clean";
        case NoiseMode::kDistractorDepth: return "distractor_depth";
        case NoiseMode::kLowContrast: return "low_contrast";
        case NoiseMode::kCameraDistortion: return "camera_distortion";
    }
    throw std::invalid_argument("unknown noise mode");
}

NoiseMode noise_mode_from_string(const std::string& name) {
    if (name == "clean") return NoiseMode::kClean;
    if (name == "distractor_depth") return NoiseMode::kDistractorDepth;
    if (name == "low_contrast") return NoiseMode::kLowContrast;
    if (name == "camera_distortion") return NoiseMode::kCameraDistortion;
    throw std::invalid_argument("unknown noise mode '" + name + "'");
}

Sample gen_sample(std::uint64_t seed, NoiseMode mode, int size) {
    if (size < 8 || size % 4 != 0) {
        throw std::invalid_argument("sample size must be >= 8 and divisible by 4, got " +
                                    std::to_string(size));
    }
    Rng rng(mix_seed(mix_seed(seed, static_cast<std::uint64_t>(mode) + 1),
                     static_cast<std::uint64_t>(size)));
    const int n = size * size;

    Sample sample;
    sample.mode = mode;
    sample.rgb = background_rgb(rng, size);

    // Background depth: shallow tilted plane, far from the camera.
    sample.depth = Grid(size, size, 1);
    {
        const double d0 = rng.uniform(0.08, 0.18);
        const double gy = rng.uniform(-0.12, 0.12);
        const double gx = rng.uniform(-0.12, 0.12);
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                double d = d0 + gy * (static_cast<double>(y) / size) +
                           gx * (static_cast<double>(x) / size) + rng.normal() * 0.015;
                sample.depth.at(y, x, 0) = std::min(0.38, std::max(0.02, d));
            }
        }
    }

    // RGB-only clutter: background blobs drawn from the same palette as the
    // foreground, absent from depth and gt.
    {
        const int blobs = 2 + static_cast<int>(rng.below(3));
        for (int i = 0; i < blobs; ++i) {
            ShapeSpec blob = random_shape(rng, size, 0.06, 0.18);
            const Color color = palette_color(rng);
            const double alpha = rng.uniform(0.25, 0.45);
            paint_rgb(sample.rgb, shape_coverage(blob, size), color, alpha);
        }
    }

    // Foreground shapes; redraw until the mask occupies 1% to 60%.
    sample.gt = Grid(size, size, 1);
    std::vector<Grid> coverages;
    for (int attempt = 0; attempt < 64; ++attempt) {
        coverages.clear();
        const int shapes = 1 + static_cast<int>(rng.below(3));
        for (int i = 0; i < shapes; ++i) {
            coverages.push_back(shape_coverage(random_shape(rng, size, 0.12, 0.28), size));
        }
        std::fill(sample.gt.data.begin(), sample.gt.data.end(), 0.0);
        int fg = 0;
        for (int i = 0; i < n; ++i) {
            for (const Grid& cov : coverages) {
                if (cov.data[static_cast<std::size_t>(i)] >= 0.5) {
                    sample.gt.data[static_cast<std::size_t>(i)] = 1.0;
                    break;
                }
            }
            if (sample.gt.data[static_cast<std::size_t>(i)] == 1.0) ++fg;
        }
        const double frac = static_cast<double>(fg) / n;
        if (frac >= 0.01 && frac <= 0.60) break;
        if (attempt == 63) throw std::runtime_error("could not satisfy foreground bounds");
    }

    const bool distractor_mode = mode == NoiseMode::kDistractorDepth;
    for (const Grid& cov : coverages) {
        const Color color = palette_color(rng);
        const double alpha = rng.uniform(0.75, 0.95);
        paint_rgb(sample.rgb, cov, color, alpha);
        // In distractor mode the salient shapes sit a bit farther back so the
        // injected distractor depth clearly dominates.
        const double d = distractor_mode ? rng.uniform(0.60, 0.80) : rng.uniform(0.68, 0.90);
        for (int i = 0; i < n; ++i) {
            if (cov.data[static_cast<std::size_t>(i)] >= 0.5) {
                sample.depth.data[static_cast<std::size_t>(i)] = d;
            }
        }
    }

    // Pixel noise on both modalities.
    for (double& v : sample.rgb.data) v = clamp01(v + rng.normal() * 0.03);
    for (double& v : sample.depth.data) v = clamp01(v + rng.normal() * 0.012);

    switch (mode) {
        case NoiseMode::kClean:
            break;
        case NoiseMode::kLowContrast: {
            double bg_sum = 0.0;
            int bg_count = 0;
            for (int i = 0; i < n; ++i) {
                if (sample.gt.data[static_cast<std::size_t>(i)] == 0.0) {
                    bg_sum += sample.depth.data[static_cast<std::size_t>(i)];
                    ++bg_count;
                }
            }
            const double pivot = bg_count > 0 ? bg_sum / bg_count : 0.5;
            const double gamma = rng.uniform(0.04, 0.10);
            for (double& v : sample.depth.data) v = clamp01(pivot + (v - pivot) * gamma);
            break;
        }
        case NoiseMode::kDistractorDepth: {
            const int distractors = 1 + static_cast<int>(rng.below(2));
            for (int i = 0; i < distractors; ++i) {
                for (int attempt = 0; attempt < 40; ++attempt) {
                    ShapeSpec spec = random_shape(rng, size, 0.08, 0.16);
                    Grid cov = shape_coverage(spec, size);
                    bool clear = true;
                    for (int p = 0; p < n && clear; ++p) {
                        if (cov.data[static_cast<std::size_t>(p)] >= 0.25 &&
                            sample.gt.data[static_cast<std::size_t>(p)] == 1.0) {
                            clear = false;
                        }
                    }
                    if (!clear) continue;
                    const double d = rng.uniform(0.94, 0.995);
                    for (int p = 0; p < n; ++p) {
                        if (cov.data[static_cast<std::size_t>(p)] >= 0.5) {
                            sample.depth.data[static_cast<std::size_t>(p)] = d;
                        }
                    }
                    const Color muted = {rng.uniform(0.30, 0.60), rng.uniform(0.30, 0.60),
                                         rng.uniform(0.30, 0.60)};
                    paint_rgb(sample.rgb, cov, muted, 0.22);
                    break;
                }
            }
            break;
        }
        case NoiseMode::kCameraDistortion: {
            const int blocks = 2 + static_cast<int>(rng.below(3));
            for (int i = 0; i < blocks; ++i) {
                const int h = size / 8 + static_cast<int>(rng.below(static_cast<std::uint64_t>(size / 4)));
                const int w = size / 8 + static_cast<int>(rng.below(static_cast<std::uint64_t>(size / 4)));
                const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(size - h)));
                const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(size - w)));
                const double v =
                    rng.uniform() < 0.7 ? rng.uniform(0.0, 0.05) : rng.uniform(0.90, 1.0);
                for (int y = y0; y < y0 + h; ++y) {
                    for (int x = x0; x < x0 + w; ++x) sample.depth.at(y, x, 0) = v;
                }
            }
            const double frac = 0.04 + 0.05 * rng.uniform();
            const int count = static_cast<int>(frac * n);
            for (int i = 0; i < count; ++i) {
                const std::size_t p = static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(n)));
                sample.depth.data[p] = rng.below(2) == 0 ? 0.0 : 1.0;
            }
            break;
        }
    }

    return sample;
}

Dataset gen_dataset(int n, double noise_fraction, std::uint64_t seed, int size) {
    if (n <= 0) throw std::invalid_argument("dataset size must be positive");
    if (!(noise_fraction >= 0.0 && noise_fraction <= 1.0)) {
        throw std::invalid_argument("noise_fraction must lie in [0,1]");
    }

    Rng plan(mix_seed(seed, kPlanStream));
    const int noisy = static_cast<int>(std::ceil(noise_fraction * n - 1e-9));

    const NoiseMode corruptions[3] = {NoiseMode::kDistractorDepth, NoiseMode::kLowContrast,
                                      NoiseMode::kCameraDistortion};
    std::vector<NoiseMode> modes(static_cast<std::size_t>(n), NoiseMode::kClean);
    for (int i = 0; i < noisy; ++i) modes[static_cast<std::size_t>(i)] = corruptions[plan.below(3)];
    plan.shuffle(modes);

    int width = 3;
    for (int v = n - 1; v >= 1000; v /= 10) ++width;

    Dataset ds;
    ds.manifest.image_size = size;
    ds.manifest.seed = seed;
    ds.manifest.noise_fraction = noise_fraction;
    const std::uint64_t sample_master = mix_seed(seed, kSampleStream);
    std::unordered_map<std::string, int> slug_counts;
    for (int i = 0; i < n; ++i) {
        const NoiseMode mode = modes[static_cast<std::size_t>(i)];
        std::string slug = to_string(mode);
        if (mode == NoiseMode::kDistractorDepth) slug = "distractor";
        if (mode == NoiseMode::kLowContrast) slug = "lowcontrast";
        if (mode == NoiseMode::kCameraDistortion) slug = "camera";
        std::string num = std::to_string(i);
        num.insert(num.begin(), static_cast<std::size_t>(std::max(0, width - static_cast<int>(num.size()))), '0');
        const std::string id = slug + "_" + num;

        const std::uint64_t sample_seed = mix_seed(sample_master, static_cast<std::uint64_t>(i));
        Sample s = gen_sample(sample_seed, mode, size);
        s.id = id;
        ds.samples.push_back(std::move(s));
        ds.manifest.samples.push_back({id, mode, sample_seed, "rgb/" + id + ".ppm",
                                       "depth/" + id + ".pgm", "gt/" + id + ".pgm"});
    }

    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    plan.shuffle(order);
    const int train_count = n * 4 / 5;
    ds.train_indices.assign(order.begin(), order.begin() + train_count);
    ds.test_indices.assign(order.begin() + train_count, order.end());
    std::sort(ds.train_indices.begin(), ds.train_indices.end());
    std::sort(ds.test_indices.begin(), ds.test_indices.end());
    for (int i : ds.train_indices) {
        ds.manifest.train_ids.push_back(ds.samples[static_cast<std::size_t>(i)].id);
    }
    for (int i : ds.test_indices) {
        ds.manifest.test_ids.push_back(ds.samples[static_cast<std::size_t>(i)].id);
    }
    return ds;
}

Grid early_fusion(const Sample& sample) {
    const Grid& rgb = sample.rgb;
    const Grid& depth = sample.depth;
    if (rgb.height != depth.height || rgb.width != depth.width) {
        throw ShapeError("rgb and depth dimensions differ");
    }
    Grid out(rgb.height, rgb.width, 4);
    for (int y = 0; y < rgb.height; ++y) {
        for (int x = 0; x < rgb.width; ++x) {
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = rgb.at(y, x, c);
            out.at(y, x, 3) = depth.at(y, x, 0);
        }
    }
    return out;
}

Grid model_input(const Sample& sample, int channels) {
    if (channels == 4) return early_fusion(sample);
    if (channels == 3) return sample.rgb;
    throw std::invalid_argument("model input must have 3 or 4 channels, got " +
                                std::to_string(channels));
}

void write_sample(const std::filesystem::path& root, const Sample& sample) {
    std::filesystem::create_directories(root / "rgb");
    std::filesystem::create_directories(root / "depth");
    std::filesystem::create_directories(root / "gt");
    write_ppm(root / "rgb" / (sample.id + ".ppm"), sample.rgb);
    write_pgm(root / "depth" / (sample.id + ".pgm"), sample.depth);
    write_pgm(root / "gt" / (sample.id + ".pgm"), sample.gt);
}

Sample read_sample(const std::filesystem::path& root, const ManifestEntry& entry) {
    Sample s;
    s.id = entry.id;
    s.mode = entry.mode;
    s.rgb = read_ppm(root / entry.rgb_path);
    s.depth = read_pgm(root / entry.depth_path);
    s.gt = read_pgm(root / entry.gt_path);
    for (double& v : s.gt.data) {
        if (v != 0.0 && v != 1.0) {
            throw ParseError((root / entry.gt_path).string() + ": mask is not binary");
        }
    }
    return s;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& root) {
    std::filesystem::create_directories(root);
    for (const Sample& s : dataset.samples) write_sample(root, s);

    nlohmann::ordered_json doc;
    doc["image_size"] = dataset.manifest.image_size;
    doc["seed"] = dataset.manifest.seed;
    doc["noise_fraction"] = dataset.manifest.noise_fraction;
    doc["samples"] = nlohmann::ordered_json::array();
    for (const ManifestEntry& e : dataset.manifest.samples) {
        doc["samples"].push_back({{"id", e.id},
                                  {"mode", to_string(e.mode)},
                                  {"seed", e.seed},
                                  {"rgb", e.rgb_path},
                                  {"depth", e.depth_path},
                                  {"gt", e.gt_path}});
    }
    doc["split"] = {{"train", dataset.manifest.train_ids}, {"test", dataset.manifest.test_ids}};

    std::ofstream out(root / "manifest.json", std::ios::binary);
    if (!out) throw std::runtime_error((root / "manifest.json").string() + ": cannot open");
    out << doc.dump(2) << "\n";
}

Dataset load_dataset(const std::filesystem::path& root) {
    const std::filesystem::path manifest_path = root / "manifest.json";
    std::ifstream in(manifest_path, std::ios::binary);
    if (!in) throw ParseError(manifest_path.string() + ": cannot open");
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(manifest_path.string() + ": " + e.what());
    }

    Dataset ds;
    try {
        ds.manifest.image_size = doc.at("image_size").get<int>();
        ds.manifest.seed = doc.at("seed").get<std::uint64_t>();
        ds.manifest.noise_fraction = doc.at("noise_fraction").get<double>();
        std::set<std::string> seen;
        for (const auto& item : doc.at("samples")) {
            ManifestEntry e;
            e.id = item.at("id").get<std::string>();
            e.mode = noise_mode_from_string(item.at("mode").get<std::string>());
            e.seed = item.at("seed").get<std::uint64_t>();
            e.rgb_path = item.at("rgb").get<std::string>();
            e.depth_path = item.at("depth").get<std::string>();
            e.gt_path = item.at("gt").get<std::string>();
            if (!seen.insert(e.id).second) {
                throw ParseError(manifest_path.string() + ": duplicate sample id '" + e.id + "'");
            }
            ds.manifest.samples.push_back(std::move(e));
        }
        ds.manifest.train_ids = doc.at("split").at("train").get<std::vector<std::string>>();
        ds.manifest.test_ids = doc.at("split").at("test").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(manifest_path.string() + ": " + e.what());
    }

    std::unordered_map<std::string, int> index;
    for (const ManifestEntry& e : ds.manifest.samples) {
        for (const std::string* rel : {&e.rgb_path, &e.depth_path, &e.gt_path}) {
            if (!std::filesystem::exists(root / *rel)) {
                throw ParseError((root / *rel).string() + ": file referenced by manifest missing");
            }
        }
        Sample s = read_sample(root, e);
        const int sz = ds.manifest.image_size;
        if (s.rgb.height != sz || s.rgb.width != sz || s.depth.height != sz ||
            s.depth.width != sz || s.gt.height != sz || s.gt.width != sz) {
            throw ParseError((root / e.rgb_path).string() + ": size differs from manifest");
        }
        index[e.id] = static_cast<int>(ds.samples.size());
        ds.samples.push_back(std::move(s));
    }
    auto resolve = [&](const std::vector<std::string>& ids, std::vector<int>& out) {
        for (const std::string& id : ids) {
            auto it = index.find(id);
            if (it == index.end()) {
                throw ParseError(manifest_path.string() + ": split references unknown id '" + id +
                                 "'");
            }
            out.push_back(it->second);
        }
    };
    resolve(ds.manifest.train_ids, ds.train_indices);
    resolve(ds.manifest.test_ids, ds.test_indices);
    return ds;
}

}  // namespace sodkd
