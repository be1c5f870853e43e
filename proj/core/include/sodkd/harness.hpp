#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "sodkd/distill.hpp"
#include "sodkd/metrics.hpp"
#include "sodkd/net.hpp"
#include "sodkd/synthdata.hpp"

namespace sodkd {

struct OptimizerConfig {
    double learning_rate = 1e-3;
    double momentum = 0.9;
    double weight_decay = 5e-4;
};

enum class RunMode {
    kTeacherCe,
    kStudentCeRgb,
    kStudentCeRgbd,
    kFixed,
    kDynamic,
    kDynamicThreshold,
};

struct RunConfig {
    NetConfig teacher;  // defaults to base 24
    NetConfig student;  // defaults to base 8
    DistillConfig distill;
    OptimizerConfig optimizer;
    int batch_size = 4;
    int epochs = 10;
    std::uint64_t seed = 0;
    RunMode mode = RunMode::kDynamicThreshold;
    double fixed_s = 0.5;  // distillation weight for RunMode::kFixed
    bool augment = true;   // seeded flip/rotate in both stages

    RunConfig() : teacher(teacher_config()), student(student_config()) {}
};

void validate(const RunConfig& cfg);

// Mode spelling used on the command line and in result rows: "rgb", "rgbd",
// "fixed:<s>", "dynamic", "dynamic+threshold", "teacher_ce".
std::string mode_label(RunMode mode, double fixed_s = 0.5);
RunMode parse_mode(const std::string& label, double* fixed_s);

struct TrainResult {
    Network net;
    std::vector<double> epoch_loss;   // mean training loss per epoch
    std::vector<WeightTrace> trace;   // one entry per processed sample (KD modes)
    double wall_time_seconds = 0.0;
};

// Teacher predictions replayed during distillation, keyed by
// (sample index, dihedral code). The augmentation stream is seed-determined
// and mode-independent, so one cache serves every distillation mode of a
// seed.
struct TeacherCache {
    std::unordered_map<std::uint64_t, Grid> logits;
};

void prefill_teacher_cache(TeacherCache& cache, const SaliencyModel& teacher,
                           const RunConfig& cfg, const Dataset& dataset);

// Stage 1: CE training of the teacher on the train split.
TrainResult train_teacher(const RunConfig& cfg, const Dataset& dataset);

// CE-only student baselines (mode selects 3- or 4-channel input).
TrainResult train_student_ce(const RunConfig& cfg, const Dataset& dataset);

// Stage 2: student trained against a frozen teacher with the configured
// weighting mode; appends one WeightTrace entry per processed sample.
TrainResult distill_student(const RunConfig& cfg, const Dataset& dataset,
                            const SaliencyModel& teacher, TeacherCache* cache = nullptr);

struct SplitReports {
    MetricReport full;
    std::optional<MetricReport> clean;
    std::optional<MetricReport> noisy;
};

MetricReport evaluate_model(const SaliencyModel& model, const Dataset& dataset,
                            const std::vector<int>& indices);
SplitReports evaluate_split(const SaliencyModel& model, const Dataset& dataset,
                            const std::vector<int>& indices);

struct ResultRow {
    std::string mode;
    std::string dataset;
    MetricReport report;
    double wall_time_seconds = 0.0;
    std::uint64_t seed = 0;
};

// Columns: mode,seed,dataset,mae,max_f,mean_f,wf,s,e. Wall time is kept out
// of the CSV so reruns of the same spec stay byte-identical; it is recorded
// in each run's metrics.json instead.
std::string results_csv_header();
std::string results_csv_row(const ResultRow& row);

// Directory name for a mode label: ':' and '+' become '_' so paths stay
// shell-friendly ("fixed:0.3" -> "fixed_0.3").
std::string mode_directory(const std::string& mode_label);

// Writes checkpoint.{json,bin}, trace.csv, metrics.json and a single-row
// results.csv into dir (created if needed).
void write_run_artifacts(const std::filesystem::path& dir, const std::string& mode_label,
                         std::uint64_t seed, const TrainResult& result,
                         const SplitReports& reports);

struct AblationMode {
    RunMode mode = RunMode::kDynamic;
    double fixed_s = 0.5;
};

struct AblationSpec {
    std::vector<AblationMode> modes;
    std::vector<std::uint64_t> seeds;
    int dataset_size = 250;  // 80/20 -> 200 train / 50 test
    double noise_fraction = 0.3;
    int image_size = 64;
    RunConfig base;
    std::filesystem::path outdir;
    int jobs = 1;
};

// Runs every (mode, seed) pair. Runs with the same seed share one generated
// dataset and one trained teacher. Outputs per run land in
// <outdir>/<mode>/<seed>/ (checkpoint.*, trace.csv, metrics.json,
// results.csv); the aggregate results.csv at <outdir>/ is reflushed as runs
// complete.
std::vector<ResultRow> run_ablation(const AblationSpec& spec);

struct TraceEpochStats {
    int epoch = 0;
    double mean_theta = 0.0;
    double min_theta = 0.0;
    double max_theta = 0.0;
    double gated_fraction = 0.0;
};

std::vector<TraceEpochStats> trace_epoch_stats(const std::vector<WeightTrace>& trace,
                                               int iterations_per_epoch);
std::string trace_summary_csv(const std::vector<TraceEpochStats>& stats);
// Per-iteration (teacher accuracy, student accuracy) = (alpha, 1 - beta).
std::string trace_scatter_csv(const std::vector<WeightTrace>& trace);

std::vector<WeightTrace> parse_trace_csv(const std::filesystem::path& path);

}  // namespace sodkd
