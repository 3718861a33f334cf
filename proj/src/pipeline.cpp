#include "trajmix/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace trajmix {

namespace {

constexpr double kDaysPerYear = 365.25;

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

bool parse_double(const std::string& s, double& out) {
    try {
        std::size_t used = 0;
        out = std::stod(s, &used);
        return used == s.size() && std::isfinite(out);
    } catch (...) {
        return false;
    }
}

// Days since 1970-01-01 for a civil date (proleptic Gregorian).
std::int64_t days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153u * static_cast<unsigned>(m + (m > 2 ? -3 : 9)) + 2u) / 5u +
                         static_cast<unsigned>(d) - 1u;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

bool parse_iso_date(const std::string& s, int& y, int& m, int& d) {
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') return false;
    try {
        y = std::stoi(s.substr(0, 4));
        m = std::stoi(s.substr(5, 2));
        d = std::stoi(s.substr(8, 2));
    } catch (...) {
        return false;
    }
    return m >= 1 && m <= 12 && d >= 1 && d <= 31;
}

}  // namespace

double date_to_years(int year, int month, int day) {
    return static_cast<double>(days_from_civil(year, month, day)) / kDaysPerYear;
}

ParseResult parse_labs(const std::vector<std::string>& paths,
                       const std::vector<std::string>& roster, const ParseOptions& options) {
    const std::set<std::string> known(roster.begin(), roster.end());
    ParseResult result;
    for (const std::string& path : paths) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open labs file: " + path);
        std::string line;
        long line_no = 0;
        int time_format = 0;  // 0 unknown, 1 date, 2 fractional
        while (std::getline(in, line)) {
            ++line_no;
            const std::string trimmed = trim(line);
            if (trimmed.empty()) continue;
            if (line_no == 1 && trimmed.rfind("patient_id", 0) == 0) continue;
            const std::vector<std::string> fields = split_csv_line(trimmed);
            auto fail = [&](const std::string& what) -> bool {
                if (options.strict)
                    throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + what);
                ++result.skipped_malformed;
                return false;
            };
            if (fields.size() != 4) {
                fail("expected 4 fields");
                continue;
            }
            RawLabEvent event;
            event.patient_id = trim(fields[0]);
            event.lab_code = trim(fields[1]);
            const std::string time_text = trim(fields[2]);
            if (event.patient_id.empty()) {
                fail("empty patient id");
                continue;
            }
            int y = 0, m = 0, d = 0;
            double frac = 0.0;
            if (parse_iso_date(time_text, y, m, d)) {
                if (time_format == 2) {
                    fail("mixed time formats in one file");
                    continue;
                }
                time_format = 1;
                event.calendar = true;
                event.year = y;
                event.month = m;
                event.time_years = date_to_years(y, m, d);
            } else if (parse_double(time_text, frac)) {
                if (time_format == 1) {
                    fail("mixed time formats in one file");
                    continue;
                }
                time_format = 2;
                event.calendar = false;
                event.time_years = frac;
            } else {
                fail("unparseable time '" + time_text + "'");
                continue;
            }
            if (!parse_double(trim(fields[3]), event.value)) {
                fail("non-numeric value '" + trim(fields[3]) + "'");
                continue;
            }
            if (!known.empty() && known.count(event.lab_code) == 0) {
                ++result.dropped_unknown_code;
                continue;
            }
            result.events.push_back(std::move(event));
        }
    }
    return result;
}

std::vector<BinnedPoint> monthly_bin(const std::vector<RawLabEvent>& events) {
    if (events.empty()) return {};
    for (std::size_t i = 1; i < events.size(); ++i) {
        if (events[i].time_years < events[i - 1].time_years)
            throw std::invalid_argument("monthly_bin expects time-sorted events");
        if (events[i].calendar != events[0].calendar)
            throw std::invalid_argument("monthly_bin cannot mix calendar and fractional times");
    }

    // key -> (sum, count); ordered map keeps bins ascending
    std::map<std::int64_t, std::pair<double, long>> bins;
    for (const RawLabEvent& event : events) {
        std::int64_t key;
        if (event.calendar)
            key = static_cast<std::int64_t>(event.year) * 12 + (event.month - 1);
        else
            key = static_cast<std::int64_t>(std::floor(event.time_years * 12.0));
        auto& slot = bins[key];
        slot.first += event.value;
        slot.second += 1;
    }

    std::vector<BinnedPoint> out;
    out.reserve(bins.size());
    for (const auto& [key, slot] : bins) {
        BinnedPoint point;
        if (events[0].calendar) {
            const int year = static_cast<int>(key >= 0 ? key / 12 : (key - 11) / 12);
            const int month = static_cast<int>(key - static_cast<std::int64_t>(year) * 12) + 1;
            const int next_year = month == 12 ? year + 1 : year;
            const int next_month = month == 12 ? 1 : month + 1;
            point.time =
                0.5 * (date_to_years(year, month, 1) + date_to_years(next_year, next_month, 1));
        } else {
            point.time = (static_cast<double>(key) + 0.5) / 12.0;
        }
        point.value = slot.first / static_cast<double>(slot.second);
        out.push_back(point);
    }
    return out;
}

std::optional<double> align_origin(std::vector<std::vector<BinnedPoint>>& series, int egfr_index,
                                   double threshold) {
    if (egfr_index < 0 || egfr_index >= static_cast<int>(series.size()))
        throw std::out_of_range("primary variable index out of range");
    std::optional<double> origin;
    for (const BinnedPoint& point : series[static_cast<std::size_t>(egfr_index)]) {
        if (point.value < threshold) {
            origin = point.time;
            break;
        }
    }
    if (!origin) return std::nullopt;
    for (std::vector<BinnedPoint>& var : series)
        for (BinnedPoint& point : var) point.time -= *origin;
    return origin;
}

std::optional<std::string> cohort_filter_reason(const std::vector<RawLabEvent>& patient_events,
                                                const CohortOptions& options) {
    long creatinine = 0;
    double first_low = std::numeric_limits<double>::infinity();
    double last_low = -std::numeric_limits<double>::infinity();
    for (const RawLabEvent& event : patient_events) {
        if (event.lab_code == options.creatinine_code) ++creatinine;
        if (event.lab_code == options.egfr_code && event.value < options.egfr_threshold) {
            first_low = std::min(first_low, event.time_years);
            last_low = std::max(last_low, event.time_years);
        }
    }
    if (creatinine < options.min_creatinine_count)
        return "creatinine-count<" + std::to_string(options.min_creatinine_count);
    if (!(last_low - first_low >= options.min_separation_days / kDaysPerYear))
        return "egfr-separation<" + std::to_string(static_cast<int>(options.min_separation_days)) +
               "d";
    return std::nullopt;
}

std::vector<Demographics> parse_demographics(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open demographics file: " + path);
    std::vector<Demographics> rows;
    std::string line;
    long line_no = 0;
    auto truthy = [](const std::string& s) {
        return s == "1" || s == "true" || s == "yes" || s == "y";
    };
    while (std::getline(in, line)) {
        ++line_no;
        const std::string trimmed = trim(line);
        if (trimmed.empty()) continue;
        if (line_no == 1 && trimmed.rfind("patient_id", 0) == 0) continue;
        const std::vector<std::string> fields = split_csv_line(trimmed);
        if (fields.size() != 6)
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": expected 6 demographic fields");
        Demographics row;
        row.patient_id = trim(fields[0]);
        if (!parse_double(trim(fields[1]), row.age))
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": bad age");
        row.gender = trim(fields[2]);
        row.race = trim(fields[3]);
        row.hypertension = truthy(trim(fields[4]));
        row.diabetes = truthy(trim(fields[5]));
        rows.push_back(std::move(row));
    }
    return rows;
}

std::pair<std::vector<Eigen::VectorXd>, CovariateLayout> build_covariates(
    const std::vector<Demographics>& rows, const std::vector<std::string>& patient_ids) {
    std::map<std::string, const Demographics*> by_id;
    for (const Demographics& row : rows) by_id[row.patient_id] = &row;

    std::string missing;
    for (const std::string& id : patient_ids)
        if (by_id.count(id) == 0) missing += (missing.empty() ? "" : ", ") + id;
    if (!missing.empty())
        throw std::runtime_error("demographics missing for patients: " + missing);

    CovariateLayout layout;
    double age_sum = 0.0, age_sq = 0.0;
    std::set<std::string> races;
    for (const std::string& id : patient_ids) {
        const Demographics& row = *by_id[id];
        age_sum += row.age;
        age_sq += row.age * row.age;
        races.insert(row.race);
    }
    const double n = static_cast<double>(patient_ids.size());
    layout.age_mean = age_sum / n;
    layout.age_sd = std::sqrt(std::max(age_sq / n - layout.age_mean * layout.age_mean, 0.0));
    if (layout.age_sd < 1e-12) layout.age_sd = 1.0;
    layout.race_levels.assign(races.begin(), races.end());  // sorted; first is the reference

    layout.names = {"intercept", "age_std", "gender_f"};
    for (std::size_t r = 1; r < layout.race_levels.size(); ++r)
        layout.names.push_back("race_" + layout.race_levels[r]);
    layout.names.push_back("hypertension");
    layout.names.push_back("diabetes");

    auto is_female = [](std::string g) {
        std::transform(g.begin(), g.end(), g.begin(), ::tolower);
        return g == "f" || g == "female" || g == "1";
    };

    std::vector<Eigen::VectorXd> covariates;
    covariates.reserve(patient_ids.size());
    const int q = static_cast<int>(layout.names.size());
    for (const std::string& id : patient_ids) {
        const Demographics& row = *by_id[id];
        Eigen::VectorXd x = Eigen::VectorXd::Zero(q);
        int pos = 0;
        x[pos++] = 1.0;
        x[pos++] = (row.age - layout.age_mean) / layout.age_sd;
        x[pos++] = is_female(row.gender) ? 1.0 : 0.0;
        for (std::size_t r = 1; r < layout.race_levels.size(); ++r)
            x[pos++] = (row.race == layout.race_levels[r]) ? 1.0 : 0.0;
        x[pos++] = row.hypertension ? 1.0 : 0.0;
        x[pos++] = row.diabetes ? 1.0 : 0.0;
        covariates.push_back(std::move(x));
    }
    return {std::move(covariates), std::move(layout)};
}

CohortBuild build_cohort(const std::vector<std::string>& lab_files,
                         const std::string& demographics_file, const CohortOptions& options) {
    if (options.roster.empty()) throw std::invalid_argument("cohort roster is empty");

    std::vector<std::string> codes;
    for (const VariableSpec& spec : options.roster) codes.push_back(spec.name);
    if (std::find(codes.begin(), codes.end(), options.creatinine_code) == codes.end())
        codes.push_back(options.creatinine_code);

    ParseOptions parse_options;
    parse_options.strict = options.strict;
    ParseResult parsed = parse_labs(lab_files, codes, parse_options);

    const int egfr_index = static_cast<int>(
        std::find_if(options.roster.begin(), options.roster.end(),
                     [&](const VariableSpec& s) { return s.name == options.egfr_code; }) -
        options.roster.begin());
    if (egfr_index == static_cast<int>(options.roster.size()))
        throw std::invalid_argument("roster must include the primary variable " +
                                    options.egfr_code);

    // Group events per patient, stably ordered by id.
    std::map<std::string, std::vector<RawLabEvent>> by_patient;
    for (RawLabEvent& event : parsed.events)
        by_patient[event.patient_id].push_back(std::move(event));

    CohortBuild build;
    build.dataset.variables = options.roster;
    build.dataset.source_files = lab_files;
    long dropped_nonpositive_log = 0;

    struct Staged {
        std::string id;
        std::vector<std::vector<BinnedPoint>> series;
    };
    std::vector<Staged> staged;

    for (auto& [id, events] : by_patient) {
        std::stable_sort(events.begin(), events.end(),
                         [](const RawLabEvent& a, const RawLabEvent& b) {
                             return a.time_years < b.time_years;
                         });
        if (const auto reason = cohort_filter_reason(events, options)) {
            build.dropped.push_back({id, *reason});
            continue;
        }

        std::vector<std::vector<RawLabEvent>> per_var(options.roster.size());
        for (const RawLabEvent& event : events) {
            const auto it = std::find(codes.begin(), codes.end(), event.lab_code);
            const std::size_t idx = static_cast<std::size_t>(it - codes.begin());
            if (idx >= options.roster.size()) continue;  // creatinine: filter only
            RawLabEvent copy = event;
            if (options.roster[idx].log_scale) {
                if (!(copy.value > 0.0)) {
                    if (options.strict)
                        throw std::runtime_error("non-positive value for log-scale lab " +
                                                 options.roster[idx].name + " on patient " + id);
                    ++dropped_nonpositive_log;
                    continue;
                }
                copy.value = std::log(copy.value);
            }
            per_var[idx].push_back(std::move(copy));
        }

        Staged entry;
        entry.id = id;
        entry.series.resize(options.roster.size());
        for (std::size_t p = 0; p < options.roster.size(); ++p)
            entry.series[p] = monthly_bin(per_var[p]);

        if (!align_origin(entry.series, egfr_index, options.egfr_threshold)) {
            build.dropped.push_back({id, "no-egfr-bin-below-threshold"});
            continue;
        }
        staged.push_back(std::move(entry));
    }

    std::vector<std::string> kept_ids;
    for (const Staged& entry : staged) kept_ids.push_back(entry.id);

    const std::vector<Demographics> demo = parse_demographics(demographics_file);
    auto [covariates, layout] = build_covariates(demo, kept_ids);
    build.dataset.covariates = layout;

    for (std::size_t i = 0; i < staged.size(); ++i) {
        PatientRecord record;
        record.id = staged[i].id;
        record.covariates = covariates[i];
        record.labs.resize(options.roster.size());
        for (std::size_t p = 0; p < options.roster.size(); ++p) {
            const std::vector<BinnedPoint>& points = staged[i].series[p];
            VarSeries& series = record.labs[p];
            series.times.resize(static_cast<Eigen::Index>(points.size()));
            series.values.resize(static_cast<Eigen::Index>(points.size()));
            for (std::size_t j = 0; j < points.size(); ++j) {
                series.times[static_cast<Eigen::Index>(j)] = points[j].time;
                series.values[static_cast<Eigen::Index>(j)] = points[j].value;
            }
        }
        build.dataset.patients.push_back(std::move(record));
    }

    build.dataset.drop_counts["unknown_code_events"] = parsed.dropped_unknown_code;
    build.dataset.drop_counts["malformed_rows"] = parsed.skipped_malformed;
    build.dataset.drop_counts["nonpositive_log_values"] = dropped_nonpositive_log;
    std::map<std::string, long> reason_counts;
    for (const DropRecord& drop : build.dropped) ++reason_counts[drop.reason];
    for (const auto& [reason, count] : reason_counts)
        build.dataset.drop_counts["patients_" + reason] = count;
    return build;
}

namespace {

using nlohmann::json;

json series_to_json(const VarSeries& series) {
    json t = json::array(), v = json::array();
    for (Eigen::Index j = 0; j < series.size(); ++j) {
        t.push_back(series.times[j]);
        v.push_back(series.values[j]);
    }
    return {{"t", std::move(t)}, {"y", std::move(v)}};
}

}  // namespace

void save_cohort(const CohortDataset& dataset, const std::string& dir,
                 const std::string& config_hash, std::uint64_t seed,
                 const std::vector<LatentState>* truth) {
    std::filesystem::create_directories(dir);

    {
        std::ofstream out(dir + "/patients.jsonl");
        if (!out) throw std::runtime_error("cannot write patients.jsonl in " + dir);
        for (const PatientRecord& patient : dataset.patients) {
            json doc;
            doc["id"] = patient.id;
            json x = json::array();
            for (Eigen::Index i = 0; i < patient.covariates.size(); ++i)
                x.push_back(patient.covariates[i]);
            doc["x"] = std::move(x);
            json labs;
            for (std::size_t p = 0; p < dataset.variables.size(); ++p)
                labs[dataset.variables[p].name] = series_to_json(patient.labs[p]);
            doc["labs"] = std::move(labs);
            out << doc.dump() << "\n";
        }
    }

    {
        std::ofstream out(dir + "/covariates.csv");
        out << "patient_id";
        for (const std::string& name : dataset.covariates.names) out << "," << name;
        out << "\n";
        out.precision(17);
        for (const PatientRecord& patient : dataset.patients) {
            out << patient.id;
            for (Eigen::Index i = 0; i < patient.covariates.size(); ++i)
                out << "," << patient.covariates[i];
            out << "\n";
        }
    }

    {
        json manifest;
        manifest["version"] = 1;
        json variables = json::array();
        for (const VariableSpec& spec : dataset.variables)
            variables.push_back({{"name", spec.name}, {"log_scale", spec.log_scale}});
        manifest["variables"] = std::move(variables);
        manifest["time_convention"] = {{"origin_rule", dataset.origin_rule},
                                       {"bin_width_years", dataset.bin_width_years}};
        manifest["covariates"] = {{"names", dataset.covariates.names},
                                  {"age_mean", dataset.covariates.age_mean},
                                  {"age_sd", dataset.covariates.age_sd},
                                  {"race_levels", dataset.covariates.race_levels}};
        manifest["provenance"] = {{"source_files", dataset.source_files},
                                  {"drop_counts", dataset.drop_counts},
                                  {"patient_count", dataset.patients.size()}};
        manifest["config_hash"] = config_hash;
        manifest["seed"] = seed;
        std::ofstream out(dir + "/manifest.json");
        out << manifest.dump(2) << "\n";
    }

    if (truth != nullptr) {
        std::ofstream out(dir + "/truth.jsonl");
        for (std::size_t i = 0; i < truth->size(); ++i) {
            const LatentState& latent = (*truth)[i];
            json doc;
            doc["id"] = dataset.patients[i].id;
            doc["c"] = latent.cluster;
            doc["z"] = latent.subpops;
            json b = json::array();
            for (Eigen::Index j = 0; j < latent.rand_effects.size(); ++j)
                b.push_back(latent.rand_effects[j]);
            doc["b"] = std::move(b);
            out << doc.dump() << "\n";
        }
    }
}

CohortDataset load_cohort(const std::string& dir) {
    CohortDataset dataset;
    {
        std::ifstream in(dir + "/manifest.json");
        if (!in) throw std::runtime_error("cannot open cohort manifest in " + dir);
        json manifest = json::parse(in);
        for (const json& var : manifest.at("variables"))
            dataset.variables.push_back(
                {var.at("name").get<std::string>(), var.at("log_scale").get<bool>()});
        dataset.origin_rule = manifest.at("time_convention").at("origin_rule").get<std::string>();
        dataset.bin_width_years =
            manifest.at("time_convention").at("bin_width_years").get<double>();
        dataset.covariates.names =
            manifest.at("covariates").at("names").get<std::vector<std::string>>();
        dataset.covariates.age_mean = manifest.at("covariates").at("age_mean").get<double>();
        dataset.covariates.age_sd = manifest.at("covariates").at("age_sd").get<double>();
        dataset.covariates.race_levels =
            manifest.at("covariates").at("race_levels").get<std::vector<std::string>>();
        if (manifest.contains("provenance") &&
            manifest.at("provenance").contains("source_files"))
            dataset.source_files =
                manifest.at("provenance").at("source_files").get<std::vector<std::string>>();
    }

    std::ifstream in(dir + "/patients.jsonl");
    if (!in) throw std::runtime_error("cannot open patients.jsonl in " + dir);
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        const json doc = json::parse(line);
        PatientRecord patient;
        patient.id = doc.at("id").get<std::string>();
        const json& x = doc.at("x");
        patient.covariates.resize(static_cast<Eigen::Index>(x.size()));
        for (Eigen::Index i = 0; i < patient.covariates.size(); ++i)
            patient.covariates[i] = x.at(i).get<double>();
        for (const VariableSpec& spec : dataset.variables) {
            const json& lab = doc.at("labs").at(spec.name);
            VarSeries series;
            const json& t = lab.at("t");
            const json& y = lab.at("y");
            series.times.resize(static_cast<Eigen::Index>(t.size()));
            series.values.resize(static_cast<Eigen::Index>(y.size()));
            for (Eigen::Index j = 0; j < series.times.size(); ++j) {
                series.times[j] = t.at(j).get<double>();
                series.values[j] = y.at(j).get<double>();
            }
            patient.labs.push_back(std::move(series));
        }
        dataset.patients.push_back(std::move(patient));
    }
    return dataset;
}

std::vector<LatentState> load_ground_truth(const std::string& dir) {
    std::ifstream in(dir + "/truth.jsonl");
    if (!in) throw std::runtime_error("cohort has no truth.jsonl: " + dir);
    std::vector<LatentState> truth;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        const json doc = json::parse(line);
        LatentState latent;
        latent.cluster = doc.at("c").get<int>();
        latent.subpops = doc.at("z").get<std::vector<int>>();
        const json& b = doc.at("b");
        latent.rand_effects.resize(static_cast<Eigen::Index>(b.size()));
        for (Eigen::Index j = 0; j < latent.rand_effects.size(); ++j)
            latent.rand_effects[j] = b.at(j).get<double>();
        truth.push_back(std::move(latent));
    }
    return truth;
}

}  // namespace trajmix
