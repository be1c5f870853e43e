#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sodkd/grid.hpp"
#include "sodkd/tape.hpp"

namespace sodkd {

enum class NetKind { kStudent, kTeacher };

std::string to_string(NetKind kind);
NetKind net_kind_from_string(const std::string& name);

struct NetConfig {
    int base_channels = 8;  // teacher default 24
    int depth_levels = 3;
    int input_channels = 4;  // 3 for the RGB-only ablation
    std::uint64_t seed = 0;
};

void validate(const NetConfig& cfg);

NetConfig student_config(std::uint64_t seed = 0, int input_channels = 4);
NetConfig teacher_config(std::uint64_t seed = 0, int input_channels = 4);

struct NamedParam {
    std::string name;
    Grid grid;
};

// Anything that maps an input grid to a saliency probability map. Lets tests
// and the distillation loop swap the trained teacher for a synthetic oracle.
class SaliencyModel {
public:
    virtual ~SaliencyModel() = default;
    virtual Grid predict(const Grid& input) const = 0;
    virtual int input_channels() const = 0;
};

// FPN-shaped encoder-decoder. The student stacks two 3x3 conv+relu per
// encoder level with 2x max-pool between levels, then walks back up with
// nearest upsampling, lateral additions and merge convs down to a 1-channel
// logit map. The teacher shares the skeleton at 3x the width and appends a
// two-branch context block (parallel 3x3 convs, summed) to every encoder
// level.
class Network : public SaliencyModel {
public:
    struct Forward {
        NodeId logits = 0;
        std::vector<NodeId> params;  // leaf ids in registration order
    };

    static Network init(NetKind kind, const NetConfig& cfg);

    Forward forward(Tape& tape, const Grid& input) const;
    Grid predict(const Grid& input) const override;
    int input_channels() const override { return cfg_.input_channels; }

    NetKind kind() const { return kind_; }
    const NetConfig& config() const { return cfg_; }
    const std::vector<NamedParam>& named_parameters() const { return params_; }
    std::vector<Grid*> parameter_grids();
    std::size_t parameter_count() const;

    // Writes <stem>.json (names, shapes, seed, config) and <stem>.bin (raw
    // little-endian float64, concatenated in manifest order).
    void save(const std::filesystem::path& stem) const;
    static Network load(const std::filesystem::path& stem);

private:
    Network() = default;

    NetKind kind_ = NetKind::kStudent;
    NetConfig cfg_;
    std::vector<NamedParam> params_;
};

}  // namespace sodkd
