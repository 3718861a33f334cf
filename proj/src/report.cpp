#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "trajmix/evaluation.hpp"

namespace trajmix {

void write_report_csv(const EvaluationReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open report file for writing: " + path);
    out << "lab,model,truncation,bin,mae_mean,mae_sd_over_folds,p_value,stars\n";
    out.precision(17);
    for (const ReportCell& cell : report.cells) {
        out << cell.lab << "," << cell.model << "," << cell.truncation << ","
            << report.bins[static_cast<std::size_t>(cell.bin_index)].label() << ","
            << cell.mae_mean << "," << cell.mae_sd << ",";
        if (!std::isnan(cell.p_value)) out << cell.p_value;
        out << "," << cell.stars << "\n";
    }
}

namespace {

std::string format_cell(const ReportCell* cell) {
    if (cell == nullptr) return "";
    std::ostringstream out;
    out << std::fixed << std::setprecision(2) << cell->mae_mean << cell->stars;
    return out.str();
}

}  // namespace

std::string render_report_table(const EvaluationReport& report) {
    // Column layout: per truncation, the bins that reach past it.
    struct Column {
        double truncation;
        int bin_index;
    };
    std::vector<Column> columns;
    for (const double trunc : report.truncations)
        for (std::size_t b = 0; b < report.bins.size(); ++b)
            if (report.bins[b].hi > trunc) columns.push_back({trunc, static_cast<int>(b)});

    auto find_cell = [&](const std::string& lab, const std::string& model,
                         const Column& column) -> const ReportCell* {
        for (const ReportCell& cell : report.cells) {
            if (cell.lab == lab && cell.model == model && cell.truncation == column.truncation &&
                cell.bin_index == column.bin_index)
                return &cell;
        }
        return nullptr;
    };

    const int label_width = 14;
    const int model_width = 14;
    const int cell_width = 11;
    std::ostringstream out;

    out << std::setw(label_width) << "" << std::setw(model_width) << "";
    for (const Column& column : columns) {
        std::ostringstream head;
        head << "t=" << column.truncation;
        out << std::setw(cell_width) << head.str();
    }
    out << "\n";
    out << std::setw(label_width) << "Lab" << std::setw(model_width) << "Model";
    for (const Column& column : columns)
        out << std::setw(cell_width) << report.bins[static_cast<std::size_t>(column.bin_index)].label();
    out << "\n";
    out << std::string(static_cast<std::size_t>(label_width + model_width +
                                                cell_width * static_cast<int>(columns.size())),
                       '-')
        << "\n";

    for (const std::string& lab : report.labs) {
        for (const std::string& model : {std::string("univariate"), std::string("multivariate")}) {
            out << std::setw(label_width) << lab << std::setw(model_width) << model;
            for (const Column& column : columns)
                out << std::setw(cell_width) << format_cell(find_cell(lab, model, column));
            out << "\n";
        }
    }
    out << "\n'.' p<.05  '*' p<.01  '**' p<.001  '***' p<.0001 (one-sided paired t, "
           "multivariate vs univariate)\n";
    return out.str();
}

}  // namespace trajmix
