#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vpt/grid_codec.hpp"

namespace vpt {

struct metric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

double iou(const PixelBox& a, const PixelBox& b);

// Intersection area over ground-truth area.
double iogt(const PixelBox& pred, const PixelBox& gt);

// Trim, case-fold, collapse whitespace, drop a trailing ".".
std::string normalize_answer(const std::string& text);
int score_exact(const std::string& answer, const std::string& ground_truth);

// ---------------------------------------------------------------------------

struct TaskScore {
    std::string task;
    std::string mode;
    int n = 0;
    double score = 0.0;
    std::optional<double> mean_iou;
    std::optional<double> mean_iogt;
    std::optional<double> invalid_rate;
    double runtime_s = 0.0;
};

struct EvalReport {
    std::string mode;
    std::string config_fingerprint;
    std::vector<TaskScore> rows;
    double runtime_s = 0.0;
};

// Writes <path>.txt (human table) and <path>.csv with columns
// task,mode,n,score,iou,iogt,invalid_rate,runtime_s. Missing region metrics
// serialize as empty fields.
void emit_report(const EvalReport& r, const std::string& path);

std::vector<TaskScore> read_report_csv(const std::string& csv_path);

// Field-wise equality with runtimes ignored (they vary run to run).
bool report_equal_ignoring_runtime(const EvalReport& a, const EvalReport& b, double tol = 0.0);

struct SweepRow {
    std::string variant;
    EvalReport report;
};

struct SweepTable {
    std::string axis;
    std::vector<SweepRow> rows;
};

// Writes <path>.txt, <path>.csv (one row per variant/task) and
// <path>_plot.csv with (series, x, y) points for plotting.
void emit_sweep(const SweepTable& table, const std::string& path);

}  // namespace vpt
