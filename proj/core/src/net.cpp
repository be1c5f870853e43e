#include "sodkd/net.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

#include "sodkd/errors.hpp"
#include "sodkd/rng.hpp"

namespace sodkd {

namespace {

struct ConvSpec {
    std::string name;
    int cin = 0;
    int cout = 0;
};

// The full layer plan in parameter registration order. Shapes, init and
// forward wiring all derive from this single description.
std::vector<ConvSpec> layer_plan(NetKind kind, const NetConfig& cfg) {
    std::vector<ConvSpec> plan;
    auto width = [&](int level) { return cfg.base_channels << level; };
    for (int l = 0; l < cfg.depth_levels; ++l) {
        const int cin = l == 0 ? cfg.input_channels : width(l - 1);
        plan.push_back({"enc" + std::to_string(l) + "a", cin, width(l)});
        plan.push_back({"enc" + std::to_string(l) + "b", width(l), width(l)});
        if (kind == NetKind::kTeacher) {
            plan.push_back({"ctx" + std::to_string(l) + "a", width(l), width(l)});
            plan.push_back({"ctx" + std::to_string(l) + "b", width(l), width(l)});
        }
    }
    for (int l = cfg.depth_levels - 1; l >= 1; --l) {
        plan.push_back({"proj" + std::to_string(l), width(l), width(l - 1)});
        plan.push_back({"merge" + std::to_string(l - 1), width(l - 1), width(l - 1)});
    }
    plan.push_back({"head", width(0), 1});
    return plan;
}

void byteswap_doubles(std::vector<double>& values) {
    for (double& v : values) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        bits = __builtin_bswap64(bits);
        std::memcpy(&v, &bits, sizeof(bits));
    }
}

}  // namespace

std::string to_string(NetKind kind) {
    return kind == NetKind::kStudent ? "student" : "teacher";
}

NetKind net_kind_from_string(const std::string& name) {
    if (name == "student") return NetKind::kStudent;
    if (name == "teacher") return NetKind::kTeacher;
    throw std::invalid_argument("unknown network kind '" + name + "'");
}

void validate(const NetConfig& cfg) {
    if (cfg.base_channels < 1) throw std::invalid_argument("base_channels must be positive");
    if (cfg.depth_levels < 1) throw std::invalid_argument("depth_levels must be positive");
    if (cfg.input_channels < 1) throw std::invalid_argument("input_channels must be positive");
}

NetConfig student_config(std::uint64_t seed, int input_channels) {
    NetConfig cfg;
    cfg.base_channels = 8;
    cfg.input_channels = input_channels;
    cfg.seed = seed;
    return cfg;
}

NetConfig teacher_config(std::uint64_t seed, int input_channels) {
    NetConfig cfg;
    cfg.base_channels = 24;
    cfg.input_channels = input_channels;
    cfg.seed = seed;
    return cfg;
}

Network Network::init(NetKind kind, const NetConfig& cfg) {
    validate(cfg);
    Network net;
    net.kind_ = kind;
    net.cfg_ = cfg;
    Rng rng(mix_seed(cfg.seed, 0x4e4554 + static_cast<std::uint64_t>(kind)));
    for (const ConvSpec& spec : layer_plan(kind, cfg)) {
        Grid kernel(3, 3, spec.cin * spec.cout);
        const double stddev = std::sqrt(2.0 / (9.0 * spec.cin));
        for (double& v : kernel.data) v = rng.normal() * stddev;
        net.params_.push_back({spec.name + "_w", std::move(kernel)});
        net.params_.push_back({spec.name + "_b", Grid(1, 1, spec.cout)});
    }
    return net;
}

Network::Forward Network::forward(Tape& tape, const Grid& input) const {
    if (input.channels != cfg_.input_channels) {
        throw ShapeError("input has " + std::to_string(input.channels) + " channels, expected " +
                         std::to_string(cfg_.input_channels));
    }
    const int stride = 1 << (cfg_.depth_levels - 1);
    if (input.height % stride != 0 || input.width % stride != 0) {
        throw ShapeError("input dims must be divisible by " + std::to_string(stride));
    }

    Forward fwd;
    fwd.params.reserve(params_.size());
    for (const NamedParam& p : params_) fwd.params.push_back(tape.leaf(p.grid, true));

    std::size_t cursor = 0;
    auto conv = [&](NodeId x) {
        const NodeId k = fwd.params[cursor];
        const NodeId b = fwd.params[cursor + 1];
        cursor += 2;
        return tape.conv2d(x, k, b);
    };

    NodeId f = tape.leaf(input);
    std::vector<NodeId> skips;
    for (int l = 0; l < cfg_.depth_levels; ++l) {
        if (l > 0) f = tape.down2_max(f);
        f = tape.relu(conv(f));
        f = tape.relu(conv(f));
        if (kind_ == NetKind::kTeacher) {
            const NodeId a = conv(f);
            const NodeId b = conv(f);
            f = tape.relu(tape.add(a, b));
        }
        skips.push_back(f);
    }
    NodeId d = skips.back();
    for (int l = cfg_.depth_levels - 1; l >= 1; --l) {
        d = tape.up2_nearest(conv(d));
        d = tape.relu(conv(tape.add(d, skips[static_cast<std::size_t>(l - 1)])));
    }
    fwd.logits = conv(d);
    return fwd;
}

Grid Network::predict(const Grid& input) const {
    Tape tape;
    Forward fwd = forward(tape, input);
    return sigmoid_map(tape.value(fwd.logits));
}

std::vector<Grid*> Network::parameter_grids() {
    std::vector<Grid*> grids;
    grids.reserve(params_.size());
    for (NamedParam& p : params_) grids.push_back(&p.grid);
    return grids;
}

std::size_t Network::parameter_count() const {
    std::size_t count = 0;
    for (const NamedParam& p : params_) count += p.grid.size();
    return count;
}

void Network::save(const std::filesystem::path& stem) const {
    nlohmann::ordered_json doc;
    doc["kind"] = to_string(kind_);
    doc["config"] = {{"base_channels", cfg_.base_channels},
                     {"depth_levels", cfg_.depth_levels},
                     {"input_channels", cfg_.input_channels},
                     {"seed", cfg_.seed}};
    doc["params"] = nlohmann::ordered_json::array();
    for (const NamedParam& p : params_) {
        doc["params"].push_back({{"name", p.name},
                                 {"height", p.grid.height},
                                 {"width", p.grid.width},
                                 {"channels", p.grid.channels}});
    }
    std::filesystem::path json_path = stem;
    json_path += ".json";
    std::ofstream jout(json_path, std::ios::binary);
    if (!jout) throw std::runtime_error(json_path.string() + ": cannot open");
    jout << doc.dump(2) << "\n";

    std::filesystem::path bin_path = stem;
    bin_path += ".bin";
    std::ofstream bout(bin_path, std::ios::binary);
    if (!bout) throw std::runtime_error(bin_path.string() + ": cannot open");
    for (const NamedParam& p : params_) {
        std::vector<double> values = p.grid.data;
        if constexpr (std::endian::native == std::endian::big) byteswap_doubles(values);
        bout.write(reinterpret_cast<const char*>(values.data()),
                   static_cast<std::streamsize>(values.size() * sizeof(double)));
    }
    if (!bout) throw std::runtime_error(bin_path.string() + ": write failed");
}

Network Network::load(const std::filesystem::path& stem) {
    std::filesystem::path json_path = stem;
    json_path += ".json";
    std::ifstream jin(json_path, std::ios::binary);
    if (!jin) throw ParseError(json_path.string() + ": cannot open");
    nlohmann::json doc;
    try {
        jin >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(json_path.string() + ": " + e.what());
    }

    NetKind kind;
    NetConfig cfg;
    try {
        kind = net_kind_from_string(doc.at("kind").get<std::string>());
        cfg.base_channels = doc.at("config").at("base_channels").get<int>();
        cfg.depth_levels = doc.at("config").at("depth_levels").get<int>();
        cfg.input_channels = doc.at("config").at("input_channels").get<int>();
        cfg.seed = doc.at("config").at("seed").get<std::uint64_t>();
    } catch (const std::exception& e) {
        throw ParseError(json_path.string() + ": " + e.what());
    }

    Network net = Network::init(kind, cfg);
    const auto& manifest = doc.at("params");
    if (manifest.size() != net.params_.size()) {
        throw ParseError(json_path.string() + ": parameter list does not match architecture");
    }
    std::size_t total = 0;
    for (std::size_t i = 0; i < net.params_.size(); ++i) {
        const auto& item = manifest[i];
        const Grid& g = net.params_[i].grid;
        if (item.at("name").get<std::string>() != net.params_[i].name ||
            item.at("height").get<int>() != g.height || item.at("width").get<int>() != g.width ||
            item.at("channels").get<int>() != g.channels) {
            throw ParseError(json_path.string() + ": parameter " + std::to_string(i) +
                             " does not match architecture");
        }
        total += g.size();
    }

    std::filesystem::path bin_path = stem;
    bin_path += ".bin";
    std::ifstream bin(bin_path, std::ios::binary);
    if (!bin) throw ParseError(bin_path.string() + ": cannot open");
    for (NamedParam& p : net.params_) {
        bin.read(reinterpret_cast<char*>(p.grid.data.data()),
                 static_cast<std::streamsize>(p.grid.size() * sizeof(double)));
        if (bin.gcount() != static_cast<std::streamsize>(p.grid.size() * sizeof(double))) {
            throw ParseError(bin_path.string() + ": truncated parameter data");
        }
        if constexpr (std::endian::native == std::endian::big) byteswap_doubles(p.grid.data);
    }
    char extra;
    if (bin.read(&extra, 1)) {
        throw ParseError(bin_path.string() + ": trailing bytes after " + std::to_string(total) +
                         " parameters");
    }
    return net;
}

}  // namespace sodkd
