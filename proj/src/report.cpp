#include "vpt/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace vpt {

double iou(const PixelBox& a, const PixelBox& b) {
    if (b.empty()) throw metric_error("iou: degenerate ground-truth box");
    if (a.empty()) return 0.0;
    const auto inter = static_cast<double>(intersect(a, b).area());
    const double uni = static_cast<double>(a.area() + b.area()) - inter;
    return inter / uni;
}

double iogt(const PixelBox& pred, const PixelBox& gt) {
    if (gt.empty()) throw metric_error("iogt: degenerate ground-truth box");
    if (pred.empty()) return 0.0;
    return static_cast<double>(intersect(pred, gt).area()) / static_cast<double>(gt.area());
}

std::string normalize_answer(const std::string& text) {
    std::string out;
    std::istringstream ss(text);
    std::string w;
    while (ss >> w) {
        std::transform(w.begin(), w.end(), w.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        if (w == ".") continue;
        if (!out.empty()) out += ' ';
        out += w;
    }
    while (!out.empty() && out.back() == '.') out.pop_back();
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

int score_exact(const std::string& answer, const std::string& ground_truth) {
    return normalize_answer(answer) == normalize_answer(ground_truth) ? 1 : 0;
}

// ---------------------------------------------------------------------------

namespace {

std::string fmt_opt(const std::optional<double>& v) {
    if (!v) return "";
    std::ostringstream ss;
    ss << std::setprecision(6) << *v;
    return ss.str();
}

std::string fmt(double v) {
    std::ostringstream ss;
    ss << std::setprecision(6) << v;
    return ss.str();
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (const char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

void emit_report(const EvalReport& r, const std::string& path) {
    {
        std::ofstream csv(path + ".csv", std::ios::trunc);
        if (!csv) throw metric_error("emit_report: cannot write " + path + ".csv");
        csv << "task,mode,n,score,iou,iogt,invalid_rate,runtime_s\n";
        for (const auto& row : r.rows)
            csv << row.task << ',' << row.mode << ',' << row.n << ',' << fmt(row.score) << ','
                << fmt_opt(row.mean_iou) << ',' << fmt_opt(row.mean_iogt) << ','
                << fmt_opt(row.invalid_rate) << ',' << fmt(row.runtime_s) << '\n';
    }
    {
        std::ofstream txt(path + ".txt", std::ios::trunc);
        if (!txt) throw metric_error("emit_report: cannot write " + path + ".txt");
        txt << "mode: " << r.mode << "\nconfig: " << r.config_fingerprint << "\n";
        txt << std::left << std::setw(20) << "task" << std::setw(16) << "mode" << std::setw(7)
            << "n" << std::setw(9) << "score" << std::setw(9) << "iou" << std::setw(9) << "iogt"
            << std::setw(13) << "invalid_rate" << "runtime_s\n";
        for (const auto& row : r.rows) {
            txt << std::left << std::setw(20) << row.task << std::setw(16) << row.mode
                << std::setw(7) << row.n << std::setw(9) << fmt(row.score) << std::setw(9)
                << (row.mean_iou ? fmt(*row.mean_iou) : "-") << std::setw(9)
                << (row.mean_iogt ? fmt(*row.mean_iogt) : "-") << std::setw(13)
                << (row.invalid_rate ? fmt(*row.invalid_rate) : "-") << fmt(row.runtime_s)
                << "\n";
        }
        txt << "total runtime_s: " << fmt(r.runtime_s) << "\n";
    }
}

std::vector<TaskScore> read_report_csv(const std::string& csv_path) {
    std::ifstream in(csv_path);
    if (!in) throw metric_error("read_report_csv: cannot open " + csv_path);
    std::string line;
    std::getline(in, line);  // header
    std::vector<TaskScore> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 8) throw metric_error("read_report_csv: bad column count");
        TaskScore row;
        row.task = f[0];
        row.mode = f[1];
        row.n = std::stoi(f[2]);
        row.score = std::stod(f[3]);
        if (!f[4].empty()) row.mean_iou = std::stod(f[4]);
        if (!f[5].empty()) row.mean_iogt = std::stod(f[5]);
        if (!f[6].empty()) row.invalid_rate = std::stod(f[6]);
        row.runtime_s = std::stod(f[7]);
        rows.push_back(row);
    }
    return rows;
}

bool report_equal_ignoring_runtime(const EvalReport& a, const EvalReport& b, double tol) {
    if (a.mode != b.mode || a.config_fingerprint != b.config_fingerprint ||
        a.rows.size() != b.rows.size())
        return false;
    const auto close = [tol](double x, double y) { return std::abs(x - y) <= tol; };
    const auto opt_close = [&](const std::optional<double>& x, const std::optional<double>& y) {
        if (x.has_value() != y.has_value()) return false;
        return !x || close(*x, *y);
    };
    for (size_t i = 0; i < a.rows.size(); ++i) {
        const auto& x = a.rows[i];
        const auto& y = b.rows[i];
        if (x.task != y.task || x.mode != y.mode || x.n != y.n || !close(x.score, y.score) ||
            !opt_close(x.mean_iou, y.mean_iou) || !opt_close(x.mean_iogt, y.mean_iogt) ||
            !opt_close(x.invalid_rate, y.invalid_rate))
            return false;
    }
    return true;
}

void emit_sweep(const SweepTable& table, const std::string& path) {
    {
        std::ofstream csv(path + ".csv", std::ios::trunc);
        if (!csv) throw metric_error("emit_sweep: cannot write " + path + ".csv");
        csv << "variant,task,mode,n,score,iou,iogt,invalid_rate,runtime_s\n";
        for (const auto& row : table.rows)
            for (const auto& t : row.report.rows)
                csv << row.variant << ',' << t.task << ',' << t.mode << ',' << t.n << ','
                    << fmt(t.score) << ',' << fmt_opt(t.mean_iou) << ',' << fmt_opt(t.mean_iogt)
                    << ',' << fmt_opt(t.invalid_rate) << ',' << fmt(t.runtime_s) << '\n';
    }
    {
        std::ofstream txt(path + ".txt", std::ios::trunc);
        txt << "sweep axis: " << table.axis << "\n";
        for (const auto& row : table.rows) {
            txt << "== " << row.variant << " ==\n";
            for (const auto& t : row.report.rows) {
                txt << "  " << std::left << std::setw(20) << t.task << " score " << fmt(t.score);
                if (t.mean_iou) txt << " iou " << fmt(*t.mean_iou);
                if (t.mean_iogt) txt << " iogt " << fmt(*t.mean_iogt);
                if (t.invalid_rate) txt << " invalid " << fmt(*t.invalid_rate);
                txt << "\n";
            }
        }
    }
    {
        std::ofstream plot(path + "_plot.csv", std::ios::trunc);
        plot << "series,x,y\n";
        for (const auto& row : table.rows) {
            double score_sum = 0, iou_sum = 0, inv_sum = 0;
            int n = 0, n_iou = 0, n_inv = 0;
            for (const auto& t : row.report.rows) {
                score_sum += t.score;
                ++n;
                if (t.mean_iou) {
                    iou_sum += *t.mean_iou;
                    ++n_iou;
                }
                if (t.invalid_rate) {
                    inv_sum += *t.invalid_rate;
                    ++n_inv;
                }
            }
            if (n) plot << "score," << row.variant << ',' << fmt(score_sum / n) << '\n';
            if (n_iou) plot << "iou," << row.variant << ',' << fmt(iou_sum / n_iou) << '\n';
            if (n_inv) plot << "invalid_rate," << row.variant << ',' << fmt(inv_sum / n_inv) << '\n';
        }
    }
}

}  // namespace vpt
