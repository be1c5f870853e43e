// Command-line front end: dataset generation, the two training stages,
// evaluation, the ablation driver and a few diagnostics. Exit codes: 0 on
// success, 1 on usage errors (help goes to stderr), 2 on runtime errors.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "sodkd/distill.hpp"
#include "sodkd/errors.hpp"
#include "sodkd/harness.hpp"
#include "sodkd/metrics.hpp"
#include "sodkd/net.hpp"
#include "sodkd/pnm.hpp"
#include "sodkd/rng.hpp"
#include "sodkd/synthdata.hpp"
#include "sodkd/tape.hpp"

namespace {

using sodkd::Grid;

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

// Links CLI11 options to JSON config keys. Values given on the command line
// win; everything ends up echoed into invocation.json.
class FlagSet {
  public:
    template <typename T>
    void bind(CLI::Option* opt, const std::string& key, T& value) {
        entries_.push_back({key, opt,
                            [&value](const nlohmann::json& cfg, const std::string& k) {
                                value = cfg.at(k).get<T>();
                            },
                            [&value](nlohmann::ordered_json& out, const std::string& k) {
                                out[k] = value;
                            }});
    }

    void apply_config(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error(path.string() + ": cannot open config");
        nlohmann::json cfg;
        try {
            cfg = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error(path.string() + ": " + e.what());
        }
        if (!cfg.is_object()) throw std::runtime_error(path.string() + ": config must be an object");
        for (const auto& [key, value] : cfg.items()) {
            const auto it = std::find_if(entries_.begin(), entries_.end(),
                                         [&](const Entry& e) { return e.key == key; });
            if (it == entries_.end()) {
                throw std::runtime_error(path.string() + ": unknown config key '" + key + "'");
            }
            if (it->opt->count() > 0) continue;  // flags win
            try {
                it->from_json(cfg, key);
            } catch (const nlohmann::json::exception& e) {
                throw std::runtime_error(path.string() + ": key '" + key + "': " + e.what());
            }
        }
    }

    nlohmann::ordered_json snapshot() const {
        nlohmann::ordered_json out;
        for (const Entry& e : entries_) e.to_json(out, e.key);
        return out;
    }

  private:
    struct Entry {
        std::string key;
        CLI::Option* opt;
        std::function<void(const nlohmann::json&, const std::string&)> from_json;
        std::function<void(nlohmann::ordered_json&, const std::string&)> to_json;
    };
    std::vector<Entry> entries_;
};

void write_invocation(const std::filesystem::path& outdir, const std::string& command,
                      const FlagSet& flags) {
    std::filesystem::create_directories(outdir);
    nlohmann::ordered_json doc;
    doc["command"] = command;
    doc["config"] = flags.snapshot();
    std::ofstream out(outdir / "invocation.json", std::ios::binary);
    if (!out) throw std::runtime_error((outdir / "invocation.json").string() + ": cannot write");
    out << doc.dump(2) << "\n";
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) throw std::invalid_argument("empty entry in seed list '" + text + "'");
        std::size_t used = 0;
        const std::uint64_t v = std::stoull(item, &used);
        if (used != item.size()) throw std::invalid_argument("bad seed '" + item + "'");
        seeds.push_back(v);
    }
    if (seeds.empty()) throw std::invalid_argument("seed list is empty");
    return seeds;
}

std::vector<sodkd::AblationMode> parse_mode_list(const std::string& text) {
    std::vector<sodkd::AblationMode> modes;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        sodkd::AblationMode m;
        m.mode = sodkd::parse_mode(item, &m.fixed_s);
        modes.push_back(m);
    }
    if (modes.empty()) throw std::invalid_argument("mode list is empty");
    return modes;
}

void print_epoch_lines(const std::vector<double>& epoch_loss) {
    for (std::size_t i = 0; i < epoch_loss.size(); ++i) {
        std::cout << "epoch " << i << ": loss " << fmt(epoch_loss[i]) << "\n";
    }
}

bool is_distill_mode(sodkd::RunMode mode) {
    return mode == sodkd::RunMode::kFixed || mode == sodkd::RunMode::kDynamic ||
           mode == sodkd::RunMode::kDynamicThreshold;
}

// ---------------------------------------------------------------------------
// Shared training-flag bundle for train-teacher / distill / ablate.

struct TrainFlags {
    int epochs = 10;
    int batch_size = 4;
    double learning_rate = 1e-3;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    bool augment = true;
    int depth_levels = 3;

    void add(CLI::App& cmd, FlagSet& flags) {
        flags.bind(cmd.add_option("--epochs", epochs, "Training epochs"), "epochs", epochs);
        flags.bind(cmd.add_option("--batch-size", batch_size, "Mini-batch size"), "batch_size",
                   batch_size);
        flags.bind(cmd.add_option("--lr", learning_rate, "SGD learning rate"), "learning_rate",
                   learning_rate);
        flags.bind(cmd.add_option("--momentum", momentum, "SGD momentum"), "momentum", momentum);
        flags.bind(cmd.add_option("--weight-decay", weight_decay, "L2 weight decay"),
                   "weight_decay", weight_decay);
        flags.bind(cmd.add_flag("--augment,!--no-augment", augment,
                                "Random flip/rotate augmentation (default on)"),
                   "augment", augment);
        flags.bind(cmd.add_option("--depth-levels", depth_levels, "Encoder pyramid levels"),
                   "depth_levels", depth_levels);
    }

    void fill(sodkd::RunConfig& cfg) const {
        cfg.epochs = epochs;
        cfg.batch_size = batch_size;
        cfg.optimizer.learning_rate = learning_rate;
        cfg.optimizer.momentum = momentum;
        cfg.optimizer.weight_decay = weight_decay;
        cfg.augment = augment;
        cfg.teacher.depth_levels = depth_levels;
        cfg.student.depth_levels = depth_levels;
    }
};

struct DistillFlags {
    double p = 0.7;
    double temperature = 5.0;
    double threshold = 0.5;
    double epsilon = 0.01;
    bool t2_scaling = true;

    void add(CLI::App& cmd, FlagSet& flags) {
        flags.bind(cmd.add_option("--p", p, "Teacher/student balance exponent"), "p", p);
        flags.bind(cmd.add_option("--temperature", temperature, "Distillation temperature"),
                   "temperature", temperature);
        flags.bind(cmd.add_option("--threshold", threshold, "Teacher-accuracy gate threshold"),
                   "threshold", threshold);
        flags.bind(cmd.add_option("--epsilon", epsilon, "Weight used when the gate fires"),
                   "epsilon", epsilon);
        flags.bind(cmd.add_flag("--t2-scaling,!--no-t2-scaling", t2_scaling,
                                "Scale the soft loss by T^2 (default on)"),
                   "t2_scaling", t2_scaling);
    }

    void fill(sodkd::DistillConfig& cfg) const {
        cfg.p = p;
        cfg.temperature = temperature;
        cfg.threshold = threshold;
        cfg.epsilon = epsilon;
        cfg.kl_t2_scaling = t2_scaling;
    }
};

// ---------------------------------------------------------------------------
// Subcommand runners.

int run_gen_data(int n, double noise_fraction, std::uint64_t seed, int size,
                 const std::filesystem::path& out, const FlagSet& flags) {
    sodkd::Dataset ds = sodkd::gen_dataset(n, noise_fraction, seed, size);
    sodkd::write_dataset(ds, out);
    write_invocation(out, "gen-data", flags);
    int noisy = 0;
    for (const auto& s : ds.samples) noisy += s.mode != sodkd::NoiseMode::kClean;
    std::cout << "wrote " << ds.samples.size() << " samples (" << noisy << " noisy, "
              << ds.train_indices.size() << " train / " << ds.test_indices.size() << " test) to "
              << out.string() << "\n";
    return 0;
}

int run_train_teacher(const std::filesystem::path& data, const std::filesystem::path& out,
                      std::uint64_t seed, int base_channels, const TrainFlags& train,
                      const FlagSet& flags) {
    sodkd::Dataset ds = sodkd::load_dataset(data);
    sodkd::RunConfig cfg;
    cfg.mode = sodkd::RunMode::kTeacherCe;
    cfg.seed = seed;
    cfg.teacher = sodkd::teacher_config(seed);
    train.fill(cfg);
    cfg.teacher.base_channels = base_channels;

    sodkd::TrainResult result = sodkd::train_teacher(cfg, ds);
    print_epoch_lines(result.epoch_loss);
    sodkd::SplitReports reports = sodkd::evaluate_split(result.net, ds, ds.test_indices);
    sodkd::write_run_artifacts(out, "teacher_ce", seed, result, reports);
    write_invocation(out, "train-teacher", flags);
    std::cout << "test wf " << fmt(reports.full.weighted_f) << ", mae " << fmt(reports.full.mae)
              << "; artifacts in " << out.string() << "\n";
    return 0;
}

int run_distill(const std::filesystem::path& data, const std::filesystem::path& teacher_stem,
                const std::string& mode_text, const std::filesystem::path& out, std::uint64_t seed,
                int base_channels, const TrainFlags& train, const DistillFlags& distill,
                const FlagSet& flags) {
    double fixed_s = 0.5;
    const sodkd::RunMode mode = sodkd::parse_mode(mode_text, &fixed_s);
    if (!is_distill_mode(mode)) {
        throw std::invalid_argument("--mode must be fixed:<s>, dynamic or dynamic+threshold");
    }
    sodkd::Dataset ds = sodkd::load_dataset(data);
    sodkd::Network teacher = sodkd::Network::load(teacher_stem);

    sodkd::RunConfig cfg;
    cfg.mode = mode;
    cfg.fixed_s = fixed_s;
    cfg.seed = seed;
    cfg.student = sodkd::student_config(seed);
    train.fill(cfg);
    distill.fill(cfg.distill);
    cfg.student.base_channels = base_channels;

    sodkd::TrainResult result = sodkd::distill_student(cfg, ds, teacher);
    print_epoch_lines(result.epoch_loss);
    sodkd::SplitReports reports = sodkd::evaluate_split(result.net, ds, ds.test_indices);
    const std::string label = sodkd::mode_label(mode, fixed_s);
    sodkd::write_run_artifacts(out, label, seed, result, reports);
    write_invocation(out, "distill", flags);
    std::cout << "test wf " << fmt(reports.full.weighted_f) << ", mae " << fmt(reports.full.mae)
              << "; artifacts in " << out.string() << "\n";
    return 0;
}

int run_evaluate(const std::filesystem::path& pred, const std::filesystem::path& gt,
                 const std::filesystem::path& checkpoint, const std::filesystem::path& data,
                 const std::string& split, const std::filesystem::path& out, const FlagSet& flags) {
    const bool dir_mode = !pred.empty() || !gt.empty();
    const bool net_mode = !checkpoint.empty() || !data.empty();
    if (dir_mode == net_mode) {
        throw std::invalid_argument("pass either --pred and --gt, or --checkpoint and --data");
    }

    nlohmann::ordered_json doc;
    double mae = 0.0, wf = 0.0;
    if (dir_mode) {
        if (pred.empty() || gt.empty()) {
            throw std::invalid_argument("--pred and --gt must be given together");
        }
        std::vector<std::string> names;
        for (const auto& entry : std::filesystem::directory_iterator(pred)) {
            if (entry.path().extension() == ".pgm") names.push_back(entry.path().filename());
        }
        std::sort(names.begin(), names.end());
        if (names.empty()) throw std::runtime_error("no .pgm maps found in " + pred.string());
        std::vector<Grid> preds, gts;
        for (const std::string& name : names) {
            preds.push_back(sodkd::read_pgm(pred / name));
            gts.push_back(sodkd::read_pgm(gt / name));
        }
        sodkd::MetricReport report = sodkd::evaluate_dataset(preds, gts);
        doc["pairs"] = names.size();
        doc["metrics"] = nlohmann::ordered_json::parse(sodkd::report_json(report));
        mae = report.mae;
        wf = report.weighted_f;
    } else {
        if (checkpoint.empty() || data.empty()) {
            throw std::invalid_argument("--checkpoint and --data must be given together");
        }
        sodkd::Network net = sodkd::Network::load(checkpoint);
        sodkd::Dataset ds = sodkd::load_dataset(data);
        std::vector<int> indices;
        if (split == "test") {
            indices = ds.test_indices;
        } else if (split == "train") {
            indices = ds.train_indices;
        } else if (split == "all") {
            indices.resize(ds.samples.size());
            for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = static_cast<int>(i);
        } else {
            throw std::invalid_argument("--split must be test, train or all");
        }
        sodkd::SplitReports reports = sodkd::evaluate_split(net, ds, indices);
        doc["pairs"] = indices.size();
        doc["metrics"] = nlohmann::ordered_json::parse(sodkd::report_json(reports.full));
        if (reports.clean) {
            doc["metrics_clean"] = nlohmann::ordered_json::parse(sodkd::report_json(*reports.clean));
        }
        if (reports.noisy) {
            doc["metrics_noisy"] = nlohmann::ordered_json::parse(sodkd::report_json(*reports.noisy));
        }
        mae = reports.full.mae;
        wf = reports.full.weighted_f;
    }

    std::filesystem::create_directories(out);
    {
        std::ofstream f(out / "metrics.json", std::ios::binary);
        if (!f) throw std::runtime_error((out / "metrics.json").string() + ": cannot write");
        f << doc.dump(2) << "\n";
    }
    write_invocation(out, "evaluate", flags);
    std::cout << "mae " << fmt(mae) << ", wf " << fmt(wf) << "\n";
    return 0;
}

int run_ablate(const std::string& modes_text, const std::string& seeds_text,
               const std::filesystem::path& out, int n, double noise_fraction, int size, int jobs,
               int teacher_channels, int student_channels, const TrainFlags& train,
               const DistillFlags& distill, const FlagSet& flags) {
    sodkd::AblationSpec spec;
    spec.modes = parse_mode_list(modes_text);
    spec.seeds = parse_seed_list(seeds_text);
    spec.dataset_size = n;
    spec.noise_fraction = noise_fraction;
    spec.image_size = size;
    spec.outdir = out;
    spec.jobs = jobs;
    train.fill(spec.base);
    distill.fill(spec.base.distill);
    spec.base.teacher.base_channels = teacher_channels;
    spec.base.student.base_channels = student_channels;

    write_invocation(out, "ablate", flags);
    std::vector<sodkd::ResultRow> rows = sodkd::run_ablation(spec);
    std::cout << sodkd::results_csv_header() << "\n";
    for (const auto& row : rows) std::cout << sodkd::results_csv_row(row) << "\n";
    std::cout << "wrote " << rows.size() << " rows to " << (out / "results.csv").string() << "\n";
    return 0;
}

int run_trace_summary(const std::filesystem::path& trace_path, int iterations_per_epoch,
                      const std::filesystem::path& out, const FlagSet& flags) {
    std::vector<sodkd::WeightTrace> trace = sodkd::parse_trace_csv(trace_path);
    if (trace.empty()) {
        throw std::runtime_error(trace_path.string() + ": trace has no entries to summarize");
    }
    auto stats = sodkd::trace_epoch_stats(trace, iterations_per_epoch);
    std::filesystem::create_directories(out);
    const std::string summary = sodkd::trace_summary_csv(stats);
    {
        std::ofstream f(out / "theta_summary.csv", std::ios::binary);
        if (!f) throw std::runtime_error((out / "theta_summary.csv").string() + ": cannot write");
        f << summary;
    }
    {
        std::ofstream f(out / "accuracy_scatter.csv", std::ios::binary);
        if (!f) {
            throw std::runtime_error((out / "accuracy_scatter.csv").string() + ": cannot write");
        }
        f << sodkd::trace_scatter_csv(trace);
    }
    write_invocation(out, "trace-summary", flags);
    std::cout << summary;
    return 0;
}

int run_fd_check(std::uint64_t seed, int size, int trials, int samples, double step,
                 double tolerance, const std::filesystem::path& out, const FlagSet& flags) {
    if (trials < 1) throw std::invalid_argument("--trials must be >= 1");

    auto random_input = [&](sodkd::Rng& rng, int channels) {
        Grid g(size, size, channels);
        for (double& v : g.data) v = rng.uniform();
        return g;
    };
    auto random_mask = [&](sodkd::Rng& rng) {
        Grid g(size, size, 1);
        for (double& v : g.data) v = rng.uniform() < 0.35 ? 1.0 : 0.0;
        return g;
    };

    auto net_error = [&](sodkd::NetKind kind) {
        double worst = 0.0;
        for (int t = 0; t < trials; ++t) {
            const std::uint64_t s = sodkd::mix_seed(seed, static_cast<std::uint64_t>(t));
            sodkd::NetConfig cfg = kind == sodkd::NetKind::kTeacher ? sodkd::teacher_config(s)
                                                                    : sodkd::student_config(s);
            sodkd::Network net = sodkd::Network::init(kind, cfg);
            sodkd::Rng rng(sodkd::mix_seed(s, 0xfd));
            const Grid input = random_input(rng, cfg.input_channels);
            const Grid mask = random_mask(rng);
            const double err = sodkd::fd_check(
                net.parameter_grids(),
                [&](sodkd::Tape& tape) {
                    auto fwd = net.forward(tape, input);
                    return sodkd::ce_loss(tape, fwd.logits, mask);
                },
                step, samples, s);
            worst = std::max(worst, err);
        }
        return worst;
    };

    const double teacher_err = net_error(sodkd::NetKind::kTeacher);
    const double student_err = net_error(sodkd::NetKind::kStudent);

    double loss_err = 0.0;
    for (int t = 0; t < trials; ++t) {
        const std::uint64_t s = sodkd::mix_seed(seed, 0x1000 + static_cast<std::uint64_t>(t));
        sodkd::NetConfig cfg = sodkd::student_config(s);
        sodkd::Network net = sodkd::Network::init(sodkd::NetKind::kStudent, cfg);
        sodkd::Rng rng(sodkd::mix_seed(s, 0xfd));
        const Grid input = random_input(rng, cfg.input_channels);
        const Grid mask = random_mask(rng);
        // Alternate between a teacher that roughly matches the mask (gate
        // stays open) and pure noise (gate fires), so both branches are hit.
        Grid teacher_logits(size, size, 1);
        for (std::size_t i = 0; i < teacher_logits.data.size(); ++i) {
            teacher_logits.data[i] = t % 2 == 0
                                         ? (mask.data[i] > 0.5 ? 2.0 : -2.0) + rng.normal() * 0.5
                                         : rng.normal() * 2.0;
        }
        sodkd::DistillConfig dcfg;
        // The weight is treated as a constant by the backward pass, so the
        // finite-difference probe has to hold it fixed as well.
        double theta0;
        {
            sodkd::Tape tape;
            auto fwd = net.forward(tape, input);
            theta0 =
                sodkd::dynamic_loss(tape, fwd.logits, teacher_logits, mask, dcfg).trace.theta;
        }
        const double err = sodkd::fd_check(
            net.parameter_grids(),
            [&](sodkd::Tape& tape) {
                auto fwd = net.forward(tape, input);
                return sodkd::dynamic_loss(tape, fwd.logits, teacher_logits, mask, dcfg, 0, "",
                                           theta0)
                    .loss;
            },
            step, samples, s);
        loss_err = std::max(loss_err, err);
    }

    const bool ok = teacher_err < tolerance && student_err < tolerance && loss_err < tolerance;
    std::cout << "teacher max relative error: " << fmt(teacher_err) << "\n"
              << "student max relative error: " << fmt(student_err) << "\n"
              << "dynamic loss max relative error: " << fmt(loss_err) << "\n"
              << "fd-check: " << (ok ? "OK" : "FAILED") << " (tolerance " << fmt(tolerance)
              << ")\n";
    write_invocation(out, "fd-check", flags);
    if (!ok) throw std::runtime_error("gradient check exceeded tolerance");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Synthetic RGB-D saliency distillation workbench"};
    app.require_subcommand(1);
    std::function<int()> runner;

    // gen-data ---------------------------------------------------------------
    {
        auto* cmd = app.add_subcommand("gen-data", "Generate a synthetic RGB-D dataset");
        auto flags = std::make_shared<FlagSet>();
        auto n = std::make_shared<int>(100);
        auto fraction = std::make_shared<double>(0.3);
        auto seed = std::make_shared<std::uint64_t>(0);
        auto size = std::make_shared<int>(64);
        auto out = std::make_shared<std::string>();
        auto config = std::make_shared<std::string>();
        flags->bind(cmd->add_option("--n", *n, "Number of samples"), "n", *n);
        flags->bind(cmd->add_option("--noise-fraction", *fraction,
                                    "Fraction of samples with corrupted depth"),
                    "noise_fraction", *fraction);
        flags->bind(cmd->add_option("--seed", *seed, "Generator seed"), "seed", *seed);
        flags->bind(cmd->add_option("--size", *size, "Square image size"), "size", *size);
        flags->bind(cmd->add_option("--out", *out, "Output directory"), "out", *out);
        cmd->add_option("--config", *config, "JSON config file (flags win)");
        cmd->callback([=, &runner]() {
            runner = [=]() {
                if (!config->empty()) flags->apply_config(*config);
                if (out->empty()) throw std::invalid_argument("--out is required");
                return run_gen_data(*n, *fraction, *seed, *size, *out, *flags);
            };
        });
    }

    // train-teacher ----------------------------------------------------------
    {
        auto* cmd = app.add_subcommand("train-teacher", "Stage 1: train the RGB-D teacher");
        auto flags = std::make_shared<FlagSet>();
        auto data = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto seed = std::make_shared<std::uint64_t>(0);
        auto channels = std::make_shared<int>(24);
        auto train = std::make_shared<TrainFlags>();
        auto config = std::make_shared<std::string>();
        flags->bind(cmd->add_option("--data", *data, "Dataset directory (manifest.json)"), "data",
                    *data);
        flags->bind(cmd->add_option("--out", *out, "Output directory"), "out", *out);
        flags->bind(cmd->add_option("--seed", *seed, "Run seed"), "seed", *seed);
        flags->bind(cmd->add_option("--base-channels", *channels, "Teacher width"),
                    "base_channels", *channels);
        train->add(*cmd, *flags);
        cmd->add_option("--config", *config, "JSON config file (flags win)");
        cmd->callback([=, &runner]() {
            runner = [=]() {
                if (!config->empty()) flags->apply_config(*config);
                if (data->empty()) throw std::invalid_argument("--data is required");
                if (out->empty()) throw std::invalid_argument("--out is required");
                return run_train_teacher(*data, *out, *seed, *channels, *train, *flags);
            };
        });
    }

    // distill ----------------------------------------------------------------
    {
        auto* cmd = app.add_subcommand("distill", "Stage 2: distill the student from a teacher");
        auto flags = std::make_shared<FlagSet>();
        auto data = std::make_shared<std::string>();
        auto teacher = std::make_shared<std::string>();
        auto mode = std::make_shared<std::string>("dynamic+threshold");
        auto out = std::make_shared<std::string>();
        auto seed = std::make_shared<std::uint64_t>(0);
        auto channels = std::make_shared<int>(8);
        auto train = std::make_shared<TrainFlags>();
        auto distill = std::make_shared<DistillFlags>();
        auto config = std::make_shared<std::string>();
        flags->bind(cmd->add_option("--data", *data, "Dataset directory (manifest.json)"), "data",
                    *data);
        flags->bind(cmd->add_option("--teacher", *teacher,
                                    "Teacher checkpoint stem (expects <stem>.json/.bin)"),
                    "teacher", *teacher);
        flags->bind(cmd->add_option("--mode", *mode,
                                    "fixed:<s>, dynamic or dynamic+threshold"),
                    "mode", *mode);
        flags->bind(cmd->add_option("--out", *out, "Output directory"), "out", *out);
        flags->bind(cmd->add_option("--seed", *seed, "Run seed"), "seed", *seed);
        flags->bind(cmd->add_option("--base-channels", *channels, "Student width"),
                    "base_channels", *channels);
        train->add(*cmd, *flags);
        distill->add(*cmd, *flags);
        cmd->add_option("--config", *config, "JSON config file (flags win)");
        cmd->callback([=, &runner]() {
            runner = [=]() {
                if (!config->empty()) flags->apply_config(*config);
                if (data->empty()) throw std::invalid_argument("--data is required");
                if (teacher->empty()) throw std::invalid_argument("--teacher is required");
                if (out->empty()) throw std::invalid_argument("--out is required");
                return run_distill(*data, *teacher, *mode, *out, *seed, *channels, *train,
                                   *distill, *flags);
            };
        });
    }

    // evaluate ---------------------------------------------------------------
    {
        auto* cmd = app.add_subcommand("evaluate", "Score saliency maps against ground truth");
        auto flags = std::make_shared<FlagSet>();
        auto pred = std::make_shared<std::string>();
        auto gt = std::make_shared<std::string>();
        auto checkpoint = std::make_shared<std::string>();
        auto data = std::make_shared<std::string>();
        auto split = std::make_shared<std::string>("test");
        auto out = std::make_shared<std::string>(".");
        auto config = std::make_shared<std::string>();
        flags->bind(cmd->add_option("--pred", *pred, "Directory of predicted .pgm maps"), "pred",
                    *pred);
        flags->bind(cmd->add_option("--gt", *gt, "Directory of ground-truth .pgm masks"), "gt",
                    *gt);
        flags->bind(cmd->add_option("--checkpoint", *checkpoint,
                                    "Checkpoint stem to run over a dataset"),
                    "checkpoint", *checkpoint);
        flags->bind(cmd->add_option("--data", *data, "Dataset directory for --checkpoint"), "data",
                    *data);
        flags->bind(cmd->add_option("--split", *split, "Dataset split: test, train or all"),
                    "split", *split);
        flags->bind(cmd->add_option("--out", *out, "Where metrics.json is written"), "out", *out);
        cmd->add_option("--config", *config, "JSON config file (flags win)");
        cmd->callback([=, &runner]() {
            runner = [=]() {
                if (!config->empty()) flags->apply_config(*config);
                return run_evaluate(*pred, *gt, *checkpoint, *data, *split, *out, *flags);
            };
        });
    }

    // ablate -----------------------------------------------------------------
    {
        auto* cmd = app.add_subcommand("ablate", "Run the mode/seed ablation grid");
        auto flags = std::make_shared<FlagSet>();
        auto modes = std::make_shared<std::string>(
            "rgbd,fixed:0.3,fixed:0.5,fixed:0.7,dynamic,dynamic+threshold");
        auto seeds = std::make_shared<std::string>("1,2,3");
        auto out = std::make_shared<std::string>();
        auto n = std::make_shared<int>(250);
        auto fraction = std::make_shared<double>(0.3);
        auto size = std::make_shared<int>(64);
        auto jobs = std::make_shared<int>(1);
        auto teacher_channels = std::make_shared<int>(24);
        auto student_channels = std::make_shared<int>(8);
        auto train = std::make_shared<TrainFlags>();
        auto distill = std::make_shared<DistillFlags>();
        auto config = std::make_shared<std::string>();
        flags->bind(cmd->add_option("--modes", *modes, "Comma-separated student modes"), "modes",
                    *modes);
        flags->bind(cmd->add_option("--seeds", *seeds, "Comma-separated seeds"), "seeds", *seeds);
        flags->bind(cmd->add_option("--out", *out, "Output directory"), "out", *out);
        flags->bind(cmd->add_option("--n", *n, "Dataset size (80/20 split)"), "n", *n);
        flags->bind(cmd->add_option("--noise-fraction", *fraction,
                                    "Fraction of samples with corrupted depth"),
                    "noise_fraction", *fraction);
        flags->bind(cmd->add_option("--size", *size, "Square image size"), "size", *size);
        flags->bind(cmd->add_option("--jobs", *jobs, "Parallel runs within a seed"), "jobs",
                    *jobs);
        flags->bind(cmd->add_option("--teacher-channels", *teacher_channels, "Teacher width"),
                    "teacher_channels", *teacher_channels);
        flags->bind(cmd->add_option("--student-channels", *student_channels, "Student width"),
                    "student_channels", *student_channels);
        train->add(*cmd, *flags);
        distill->add(*cmd, *flags);
        cmd->add_option("--config", *config, "JSON config file (flags win)");
        cmd->callback([=, &runner]() {
            runner = [=]() {
                if (!config->empty()) flags->apply_config(*config);
                if (out->empty()) throw std::invalid_argument("--out is required");
                return run_ablate(*modes, *seeds, *out, *n, *fraction, *size, *jobs,
                                  *teacher_channels, *student_channels, *train, *distill, *flags);
            };
        });
    }

    // trace-summary ----------------------------------------------------------
    {
        auto* cmd = app.add_subcommand("trace-summary",
                                       "Per-epoch theta statistics from a trace.csv");
        auto flags = std::make_shared<FlagSet>();
        auto trace = std::make_shared<std::string>();
        auto ipe = std::make_shared<int>(0);
        auto out = std::make_shared<std::string>(".");
        auto config = std::make_shared<std::string>();
        flags->bind(cmd->add_option("--trace", *trace, "trace.csv produced by a distill run"),
                    "trace", *trace);
        flags->bind(cmd->add_option("--iterations-per-epoch", *ipe,
                                    "Trace rows per epoch (the training split size)"),
                    "iterations_per_epoch", *ipe);
        flags->bind(cmd->add_option("--out", *out, "Where the summary CSVs are written"), "out",
                    *out);
        cmd->add_option("--config", *config, "JSON config file (flags win)");
        cmd->callback([=, &runner]() {
            runner = [=]() {
                if (!config->empty()) flags->apply_config(*config);
                if (trace->empty()) throw std::invalid_argument("--trace is required");
                if (*ipe < 1) throw std::invalid_argument("--iterations-per-epoch must be >= 1");
                return run_trace_summary(*trace, *ipe, *out, *flags);
            };
        });
    }

    // fd-check ---------------------------------------------------------------
    {
        auto* cmd = app.add_subcommand("fd-check",
                                       "Finite-difference gradient check on both nets");
        auto flags = std::make_shared<FlagSet>();
        auto seed = std::make_shared<std::uint64_t>(1);
        auto size = std::make_shared<int>(16);
        auto trials = std::make_shared<int>(5);
        auto samples = std::make_shared<int>(50);
        auto step = std::make_shared<double>(1e-5);
        auto tolerance = std::make_shared<double>(1e-3);
        auto out = std::make_shared<std::string>(".");
        auto config = std::make_shared<std::string>();
        flags->bind(cmd->add_option("--seed", *seed, "Base seed"), "seed", *seed);
        flags->bind(cmd->add_option("--size", *size, "Square input size"), "size", *size);
        flags->bind(cmd->add_option("--trials", *trials, "Independent random trials"), "trials",
                    *trials);
        flags->bind(cmd->add_option("--samples", *samples, "Sampled parameters per trial"),
                    "samples", *samples);
        flags->bind(cmd->add_option("--step", *step, "Central-difference step"), "step", *step);
        flags->bind(cmd->add_option("--tolerance", *tolerance, "Max relative error allowed"),
                    "tolerance", *tolerance);
        flags->bind(cmd->add_option("--out", *out, "Where invocation.json is written"), "out",
                    *out);
        cmd->add_option("--config", *config, "JSON config file (flags win)");
        cmd->callback([=, &runner]() {
            runner = [=]() {
                if (!config->empty()) flags->apply_config(*config);
                return run_fd_check(*seed, *size, *trials, *samples, *step, *tolerance, *out,
                                    *flags);
            };
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        CLI::App* scope = &app;
        const auto parsed = app.get_subcommands();
        if (!parsed.empty()) scope = parsed.back();
        std::cerr << "error: " << e.what() << "\n\n" << scope->help() << std::flush;
        return 1;
    }

    try {
        return runner();
    } catch (const std::invalid_argument& e) {
        CLI::App* scope = &app;
        const auto parsed = app.get_subcommands();
        if (!parsed.empty()) scope = parsed.back();
        std::cerr << "error: " << e.what() << "\n\n" << scope->help() << std::flush;
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
