#include "sodkd/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"

#include "sodkd/errors.hpp"
#include "sodkd/rng.hpp"

namespace sodkd {

namespace {

constexpr std::uint64_t kOrderStream = 0x4f524452;
constexpr std::uint64_t kAugStream = 0x41554731;
constexpr std::uint64_t kTeacherInitStream = 0x54494e49;
constexpr std::uint64_t kStudentInitStream = 0x53494e49;

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// Per-epoch visit order and dihedral code for every training step. Driven
// only by (seed, epochs, augment, train split), so every mode of a seed sees
// the same stream.
std::vector<std::vector<std::pair<int, int>>> augmentation_plan(const RunConfig& cfg,
                                                                const Dataset& ds) {
    if (ds.train_indices.empty()) throw std::invalid_argument("dataset has no training samples");
    const Grid& first = ds.samples[static_cast<std::size_t>(ds.train_indices[0])].gt;
    const bool square = first.height == first.width;
    Rng order_rng(mix_seed(cfg.seed, kOrderStream));
    Rng aug_rng(mix_seed(cfg.seed, kAugStream));
    std::vector<std::vector<std::pair<int, int>>> plan(static_cast<std::size_t>(cfg.epochs));
    for (auto& epoch : plan) {
        std::vector<int> order = ds.train_indices;
        order_rng.shuffle(order);
        epoch.reserve(order.size());
        for (int idx : order) {
            const int code =
                cfg.augment ? static_cast<int>(aug_rng.below(square ? 8 : 4)) : 0;
            epoch.emplace_back(idx, code);
        }
    }
    return plan;
}

const Grid& cached_teacher_logits(TeacherCache& cache, const SaliencyModel& teacher,
                                  const Dataset& ds, int idx, int code) {
    const std::uint64_t key = static_cast<std::uint64_t>(idx) * 8 + static_cast<std::uint64_t>(code);
    auto it = cache.logits.find(key);
    if (it != cache.logits.end()) return it->second;
    const Sample& s = ds.samples[static_cast<std::size_t>(idx)];
    Grid input = dihedral_transform(model_input(s, teacher.input_channels()), code);
    Grid probs = teacher.predict(input);
    if (probs.height != s.gt.height || probs.width != s.gt.width || probs.channels != 1) {
        throw ShapeError("teacher prediction shape does not match sample " + s.id);
    }
    return cache.logits.emplace(key, logit_map(probs)).first->second;
}

bool is_distill_mode(RunMode mode) {
    return mode == RunMode::kFixed || mode == RunMode::kDynamic ||
           mode == RunMode::kDynamicThreshold;
}

TrainResult run_training(const RunConfig& cfg, const Dataset& ds, NetKind kind,
                         const NetConfig& net_cfg, const SaliencyModel* teacher,
                         TeacherCache* cache) {
    validate(cfg);
    const auto start = std::chrono::steady_clock::now();

    TrainResult result{Network::init(kind, net_cfg), {}, {}, 0.0};
    const auto plan = augmentation_plan(cfg, ds);
    std::vector<Grid*> params = result.net.parameter_grids();
    std::vector<Grid> velocity;
    std::vector<Grid> grad_acc;
    velocity.reserve(params.size());
    grad_acc.reserve(params.size());
    for (Grid* p : params) {
        velocity.emplace_back(p->height, p->width, p->channels);
        grad_acc.emplace_back(p->height, p->width, p->channels);
    }

    TeacherCache local_cache;
    TeacherCache* tcache = cache ? cache : &local_cache;
    const OptimizerConfig& opt = cfg.optimizer;
    long long iteration = 0;

    for (std::size_t epoch = 0; epoch < plan.size(); ++epoch) {
        double epoch_sum = 0.0;
        const auto& steps = plan[epoch];
        for (std::size_t b = 0; b < steps.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t batch_n =
                std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), steps.size() - b);
            for (Grid& g : grad_acc) std::fill(g.data.begin(), g.data.end(), 0.0);

            for (std::size_t k = 0; k < batch_n; ++k) {
                const auto [idx, code] = steps[b + k];
                const Sample& s = ds.samples[static_cast<std::size_t>(idx)];
                Grid g = dihedral_transform(s.gt, code);
                Grid x = dihedral_transform(model_input(s, net_cfg.input_channels), code);

                Tape tape;
                auto fwd = result.net.forward(tape, x);
                NodeId loss;
                if (teacher == nullptr) {
                    loss = ce_loss(tape, fwd.logits, g);
                } else {
                    const Grid& tl = cached_teacher_logits(*tcache, *teacher, ds, idx, code);
                    std::optional<double> theta_override;
                    if (cfg.mode == RunMode::kFixed) {
                        theta_override = cfg.fixed_s;
                    } else if (cfg.mode == RunMode::kDynamic) {
                        // Ungated variant: the tanh weight applies even when
                        // the teacher is below the confidence threshold.
                        const double a = alpha_t(sigmoid_map(tl), g);
                        const double be = beta_s(sigmoid_map(tape.value(fwd.logits)), g);
                        theta_override = std::tanh(std::pow(a, cfg.distill.p) *
                                                   std::pow(be, 1.0 - cfg.distill.p));
                    }
                    auto dres = dynamic_loss(tape, fwd.logits, tl, g, cfg.distill, iteration, s.id,
                                             theta_override);
                    loss = dres.loss;
                    result.trace.push_back(dres.trace);
                }

                const double loss_value = tape.value(loss).data[0];
                if (!std::isfinite(loss_value)) {
                    throw DivergenceError("training diverged: non-finite loss at epoch " +
                                          std::to_string(epoch) + ", iteration " +
                                          std::to_string(iteration) + " (sample " + s.id + ")");
                }
                tape.backward(loss);
                for (std::size_t i = 0; i < params.size(); ++i) {
                    grad_acc[i].add_scaled(tape.grad(fwd.params[i]),
                                           1.0 / static_cast<double>(batch_n));
                }
                epoch_sum += loss_value;
                ++iteration;
            }

            for (std::size_t i = 0; i < params.size(); ++i) {
                Grid& w = *params[i];
                Grid& v = velocity[i];
                const Grid& g = grad_acc[i];
                for (std::size_t k = 0; k < w.data.size(); ++k) {
                    v.data[k] = opt.momentum * v.data[k] -
                                opt.learning_rate * (g.data[k] + opt.weight_decay * w.data[k]);
                    w.data[k] += v.data[k];
                }
            }
        }
        result.epoch_loss.push_back(epoch_sum / static_cast<double>(steps.size()));
    }

    result.wall_time_seconds = seconds_since(start);
    return result;
}

nlohmann::ordered_json report_as_json(const MetricReport& r) {
    return nlohmann::ordered_json::parse(report_json(r));
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
    out << text;
}

}  // namespace

std::string mode_directory(const std::string& label) {
    std::string dir = label;
    for (char& c : dir) {
        if (c == ':' || c == '+') c = '_';
    }
    return dir;
}

void write_run_artifacts(const std::filesystem::path& dir, const std::string& label,
                         std::uint64_t seed, const TrainResult& result,
                         const SplitReports& reports) {
    std::filesystem::create_directories(dir);
    result.net.save(dir / "checkpoint");

    std::ostringstream trace;
    trace << trace_csv_header() << "\n";
    for (const WeightTrace& row : result.trace) trace << trace_csv_row(row) << "\n";
    write_text(dir / "trace.csv", trace.str());

    nlohmann::ordered_json doc;
    doc["mode"] = label;
    doc["seed"] = seed;
    doc["wall_time_seconds"] = result.wall_time_seconds;
    doc["epoch_loss"] = result.epoch_loss;
    doc["reports"] = nlohmann::ordered_json::object();
    doc["reports"]["test"] = report_as_json(reports.full);
    if (reports.clean) doc["reports"]["test_clean"] = report_as_json(*reports.clean);
    if (reports.noisy) doc["reports"]["test_noisy"] = report_as_json(*reports.noisy);
    write_text(dir / "metrics.json", doc.dump(2) + "\n");

    ResultRow row{label, "test", reports.full, result.wall_time_seconds, seed};
    write_text(dir / "results.csv", results_csv_header() + "\n" + results_csv_row(row) + "\n");
}

void validate(const RunConfig& cfg) {
    validate(cfg.teacher);
    validate(cfg.student);
    cfg.distill.validate();
    // The documented learning_rate=0 behavior (parameters unchanged) is part
    // of the contract, so zero is allowed.
    if (!(cfg.optimizer.learning_rate >= 0.0) || !std::isfinite(cfg.optimizer.learning_rate)) {
        throw std::invalid_argument("learning_rate must be finite and >= 0");
    }
    if (!(cfg.optimizer.momentum >= 0.0 && cfg.optimizer.momentum < 1.0)) {
        throw std::invalid_argument("momentum must lie in [0,1)");
    }
    if (!(cfg.optimizer.weight_decay >= 0.0)) {
        throw std::invalid_argument("weight_decay must be >= 0");
    }
    if (cfg.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (cfg.epochs < 0) throw std::invalid_argument("epochs must be >= 0");
    if (!(cfg.fixed_s >= 0.0 && cfg.fixed_s <= 1.0)) {
        throw std::invalid_argument("fixed_s must lie in [0,1]");
    }
}

std::string mode_label(RunMode mode, double fixed_s) {
    switch (mode) {
        case RunMode::kTeacherCe: return "teacher_ce";
        case RunMode::kStudentCeRgb: return "rgb";
        case RunMode::kStudentCeRgbd: return "rgbd";
        case RunMode::kFixed: {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "fixed:%g", fixed_s);
            return buf;
        }
        case RunMode::kDynamic: return "dynamic";
        case RunMode::kDynamicThreshold: return "dynamic+threshold";
    }
    throw std::invalid_argument("unknown run mode");
}

RunMode parse_mode(const std::string& label, double* fixed_s) {
    if (label == "teacher_ce") return RunMode::kTeacherCe;
    if (label == "rgb" || label == "student_ce_rgb") return RunMode::kStudentCeRgb;
    if (label == "rgbd" || label == "student_ce_rgbd") return RunMode::kStudentCeRgbd;
    if (label == "dynamic") return RunMode::kDynamic;
    if (label == "dynamic+threshold" || label == "dynamic_threshold") {
        return RunMode::kDynamicThreshold;
    }
    if (label.rfind("fixed:", 0) == 0) {
        const std::string value = label.substr(6);
        std::size_t used = 0;
        double s = 0.0;
        try {
            s = std::stod(value, &used);
        } catch (const std::exception&) {
            throw std::invalid_argument("bad fixed weight in mode '" + label + "'");
        }
        if (used != value.size() || !(s >= 0.0 && s <= 1.0)) {
            throw std::invalid_argument("fixed weight must lie in [0,1] in mode '" + label + "'");
        }
        if (fixed_s) *fixed_s = s;
        return RunMode::kFixed;
    }
    throw std::invalid_argument("unknown mode '" + label + "'");
}

void prefill_teacher_cache(TeacherCache& cache, const SaliencyModel& teacher, const RunConfig& cfg,
                           const Dataset& dataset) {
    for (const auto& epoch : augmentation_plan(cfg, dataset)) {
        for (const auto& [idx, code] : epoch) {
            cached_teacher_logits(cache, teacher, dataset, idx, code);
        }
    }
}

TrainResult train_teacher(const RunConfig& cfg, const Dataset& dataset) {
    return run_training(cfg, dataset, NetKind::kTeacher, cfg.teacher, nullptr, nullptr);
}

TrainResult train_student_ce(const RunConfig& cfg, const Dataset& dataset) {
    if (cfg.mode != RunMode::kStudentCeRgb && cfg.mode != RunMode::kStudentCeRgbd) {
        throw std::invalid_argument("train_student_ce requires a student CE mode");
    }
    NetConfig net_cfg = cfg.student;
    net_cfg.input_channels = cfg.mode == RunMode::kStudentCeRgb ? 3 : 4;
    return run_training(cfg, dataset, NetKind::kStudent, net_cfg, nullptr, nullptr);
}

TrainResult distill_student(const RunConfig& cfg, const Dataset& dataset,
                            const SaliencyModel& teacher, TeacherCache* cache) {
    if (!is_distill_mode(cfg.mode)) {
        throw std::invalid_argument("distill_student requires fixed, dynamic or dynamic+threshold mode");
    }
    return run_training(cfg, dataset, NetKind::kStudent, cfg.student, &teacher, cache);
}

MetricReport evaluate_model(const SaliencyModel& model, const Dataset& dataset,
                            const std::vector<int>& indices) {
    std::vector<Grid> preds, gts;
    preds.reserve(indices.size());
    gts.reserve(indices.size());
    for (int idx : indices) {
        const Sample& s = dataset.samples[static_cast<std::size_t>(idx)];
        preds.push_back(model.predict(model_input(s, model.input_channels())));
        gts.push_back(s.gt);
    }
    return evaluate_dataset(preds, gts);
}

SplitReports evaluate_split(const SaliencyModel& model, const Dataset& dataset,
                            const std::vector<int>& indices) {
    std::vector<Grid> preds, gts, clean_p, clean_g, noisy_p, noisy_g;
    for (int idx : indices) {
        const Sample& s = dataset.samples[static_cast<std::size_t>(idx)];
        Grid p = model.predict(model_input(s, model.input_channels()));
        if (s.mode == NoiseMode::kClean) {
            clean_p.push_back(p);
            clean_g.push_back(s.gt);
        } else {
            noisy_p.push_back(p);
            noisy_g.push_back(s.gt);
        }
        preds.push_back(std::move(p));
        gts.push_back(s.gt);
    }
    SplitReports reports{evaluate_dataset(preds, gts), std::nullopt, std::nullopt};
    if (!clean_p.empty()) reports.clean = evaluate_dataset(clean_p, clean_g);
    if (!noisy_p.empty()) reports.noisy = evaluate_dataset(noisy_p, noisy_g);
    return reports;
}

std::string results_csv_header() { return "mode,seed," + report_csv_header(); }

std::string results_csv_row(const ResultRow& row) {
    return row.mode + "," + std::to_string(row.seed) + "," +
           report_csv_row(row.dataset, row.report);
}

std::vector<ResultRow> run_ablation(const AblationSpec& spec) {
    if (spec.modes.empty()) throw std::invalid_argument("ablation needs at least one mode");
    if (spec.seeds.empty()) throw std::invalid_argument("ablation needs at least one seed");
    for (const AblationMode& m : spec.modes) {
        if (m.mode == RunMode::kTeacherCe) {
            throw std::invalid_argument("the teacher is trained implicitly; list student modes only");
        }
    }
    if (spec.dataset_size < 5) throw std::invalid_argument("dataset too small for an 80/20 split");
    if (spec.jobs < 1) throw std::invalid_argument("jobs must be >= 1");
    validate(spec.base);

    std::filesystem::create_directories(spec.outdir);
    const std::size_t total = spec.seeds.size() * spec.modes.size();
    std::vector<std::optional<ResultRow>> rows(total);

    auto flush = [&]() {
        std::ostringstream csv;
        csv << results_csv_header() << "\n";
        for (const auto& row : rows) {
            if (row) csv << results_csv_row(*row) << "\n";
        }
        write_text(spec.outdir / "results.csv", csv.str());
    };

    for (std::size_t si = 0; si < spec.seeds.size(); ++si) {
        const std::uint64_t seed = spec.seeds[si];
        const Dataset dataset =
            gen_dataset(spec.dataset_size, spec.noise_fraction, seed, spec.image_size);

        RunConfig teacher_cfg = spec.base;
        teacher_cfg.seed = seed;
        teacher_cfg.mode = RunMode::kTeacherCe;
        teacher_cfg.teacher.seed = mix_seed(seed, kTeacherInitStream);
        const TrainResult teacher_result = train_teacher(teacher_cfg, dataset);
        {
            const auto dir = spec.outdir / "teacher" / std::to_string(seed);
            const SplitReports reports =
                evaluate_split(teacher_result.net, dataset, dataset.test_indices);
            write_run_artifacts(dir, "teacher_ce", seed, teacher_result, reports);
        }

        TeacherCache cache;
        const bool any_kd = std::any_of(spec.modes.begin(), spec.modes.end(),
                                        [](const AblationMode& m) { return is_distill_mode(m.mode); });
        if (any_kd) {
            RunConfig plan_cfg = spec.base;
            plan_cfg.seed = seed;
            prefill_teacher_cache(cache, teacher_result.net, plan_cfg, dataset);
        }

        auto run_one = [&](std::size_t mi) {
            const AblationMode& m = spec.modes[mi];
            RunConfig cfg = spec.base;
            cfg.seed = seed;
            cfg.mode = m.mode;
            cfg.fixed_s = m.fixed_s;
            cfg.student.seed = mix_seed(seed, kStudentInitStream);
            TrainResult result = is_distill_mode(m.mode)
                                     ? distill_student(cfg, dataset, teacher_result.net, &cache)
                                     : train_student_ce(cfg, dataset);
            const std::string label = mode_label(m.mode, m.fixed_s);
            const SplitReports reports = evaluate_split(result.net, dataset, dataset.test_indices);
            write_run_artifacts(spec.outdir / mode_directory(label) / std::to_string(seed), label,
                                seed, result, reports);
            rows[si * spec.modes.size() + mi] =
                ResultRow{label, "test", reports.full, result.wall_time_seconds, seed};
        };

        if (spec.jobs <= 1 || spec.modes.size() == 1) {
            for (std::size_t mi = 0; mi < spec.modes.size(); ++mi) {
                try {
                    run_one(mi);
                } catch (...) {
                    flush();
                    throw;
                }
                flush();
            }
        } else {
            std::atomic<std::size_t> next{0};
            std::exception_ptr error;
            std::mutex error_mutex;
            auto worker = [&]() {
                for (;;) {
                    const std::size_t mi = next.fetch_add(1);
                    if (mi >= spec.modes.size()) return;
                    try {
                        run_one(mi);
                    } catch (...) {
                        std::lock_guard<std::mutex> lock(error_mutex);
                        if (!error) error = std::current_exception();
                        return;
                    }
                }
            };
            std::vector<std::thread> pool;
            const std::size_t n_workers =
                std::min<std::size_t>(static_cast<std::size_t>(spec.jobs), spec.modes.size());
            pool.reserve(n_workers);
            for (std::size_t i = 0; i < n_workers; ++i) pool.emplace_back(worker);
            for (std::thread& t : pool) t.join();
            flush();
            if (error) std::rethrow_exception(error);
        }
    }

    std::vector<ResultRow> out;
    out.reserve(total);
    for (auto& row : rows) out.push_back(std::move(*row));
    return out;
}

std::vector<TraceEpochStats> trace_epoch_stats(const std::vector<WeightTrace>& trace,
                                               int iterations_per_epoch) {
    if (trace.empty()) throw std::invalid_argument("trace is empty");
    if (iterations_per_epoch < 1) throw std::invalid_argument("iterations_per_epoch must be >= 1");
    std::vector<TraceEpochStats> stats;
    std::vector<long long> counts;
    for (const WeightTrace& row : trace) {
        const long long epoch = row.iteration / iterations_per_epoch;
        if (epoch < 0) throw std::invalid_argument("negative iteration in trace");
        while (stats.size() <= static_cast<std::size_t>(epoch)) {
            stats.push_back({static_cast<int>(stats.size()), 0.0, 1e300, -1e300, 0.0});
            counts.push_back(0);
        }
        TraceEpochStats& s = stats[static_cast<std::size_t>(epoch)];
        s.mean_theta += row.theta;
        s.min_theta = std::min(s.min_theta, row.theta);
        s.max_theta = std::max(s.max_theta, row.theta);
        s.gated_fraction += row.gated ? 1.0 : 0.0;
        ++counts[static_cast<std::size_t>(epoch)];
    }
    // Drop epochs with no entries (possible with sparse iteration numbering).
    std::vector<TraceEpochStats> filled;
    for (std::size_t e = 0; e < stats.size(); ++e) {
        if (counts[e] == 0) continue;
        TraceEpochStats s = stats[e];
        s.mean_theta /= static_cast<double>(counts[e]);
        s.gated_fraction /= static_cast<double>(counts[e]);
        filled.push_back(s);
    }
    return filled;
}

std::string trace_summary_csv(const std::vector<TraceEpochStats>& stats) {
    std::ostringstream out;
    out << "epoch,mean_theta,min_theta,max_theta,gated_fraction\n";
    for (const TraceEpochStats& s : stats) {
        out << s.epoch << "," << fmt(s.mean_theta) << "," << fmt(s.min_theta) << ","
            << fmt(s.max_theta) << "," << fmt(s.gated_fraction) << "\n";
    }
    return out.str();
}

std::string trace_scatter_csv(const std::vector<WeightTrace>& trace) {
    std::ostringstream out;
    out << "teacher_acc,student_acc\n";
    for (const WeightTrace& row : trace) {
        out << fmt(row.alpha_t) << "," << fmt(1.0 - row.beta_s) << "\n";
    }
    return out.str();
}

std::vector<WeightTrace> parse_trace_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(path.string() + ": cannot open");
    std::string line;
    if (!std::getline(in, line) || line != trace_csv_header()) {
        throw ParseError(path.string() + ": unexpected trace header");
    }
    std::vector<WeightTrace> trace;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        for (;;) {
            const std::size_t comma = line.find(',', start);
            fields.push_back(line.substr(start, comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (fields.size() != 6) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected 6 fields");
        }
        try {
            WeightTrace row;
            row.iteration = std::stoll(fields[0]);
            row.sample_id = fields[1];
            row.alpha_t = std::stod(fields[2]);
            row.beta_s = std::stod(fields[3]);
            row.theta = std::stod(fields[4]);
            if (fields[5] != "0" && fields[5] != "1") throw std::invalid_argument("gated flag");
            row.gated = fields[5] == "1";
            trace.push_back(std::move(row));
        } catch (const std::exception&) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": malformed row");
        }
    }
    return trace;
}

}  // namespace sodkd
