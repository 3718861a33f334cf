#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "trajmix/evaluation.hpp"
#include "trajmix/fit.hpp"
#include "trajmix/model.hpp"
#include "trajmix/pipeline.hpp"
#include "trajmix/predict.hpp"

namespace trajmix {

/// Value node for the TOML subset used by run configs: scalars and
/// (possibly nested) arrays under dotted section keys.
struct TomlValue {
    std::variant<bool, std::int64_t, double, std::string, std::vector<TomlValue>> data;

    bool as_bool() const;
    std::int64_t as_int() const;
    double as_double() const;  // accepts integers
    const std::string& as_string() const;
    const std::vector<TomlValue>& as_array() const;
};

class TomlTable {
public:
    bool has(const std::string& key) const { return values_.count(key) > 0; }
    const TomlValue& at(const std::string& key) const;

    bool get_bool(const std::string& key, bool fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    std::vector<double> get_double_array(const std::string& key) const;
    std::vector<std::string> get_string_array(const std::string& key) const;

    void set(const std::string& key, TomlValue value) { values_[key] = std::move(value); }
    const std::map<std::string, TomlValue>& entries() const { return values_; }

private:
    std::map<std::string, TomlValue> values_;
};

/// Parses `[section]` headers, `key = value` lines, comments, strings,
/// numbers, booleans and (nested) arrays. Keys flatten to "section.key".
TomlTable parse_toml(const std::string& text);
TomlTable parse_toml_file(const std::string& path);

struct SimulateConfig {
    std::string snapshot;  // path to generating parameters; empty = built-in demo
    double t_lo = 0.0;
    double t_hi = 8.0;
    double noise_sd = 1.0;
    double separation_sds = 5.0;
    double rand_eff_corr = 0.0;
    int normal_covariates = 2;
    int bernoulli_covariates = 0;
    double bernoulli_p = 0.5;
    std::vector<double> p_unobserved;  // per variable; missing entries = 0
    int obs_min = 4;
    int obs_max = 12;
};

/// Everything a run needs, from one TOML file; flags override afterwards.
struct AppConfig {
    ModelConfig model;
    FitOptions fit;
    EvalProtocol protocol;
    HeldoutOptions heldout;
    CohortOptions preprocess;
    SimulateConfig simulate;
    std::string config_hash;  // FNV-1a of the file text
};

AppConfig app_config_from_toml(const TomlTable& table, const std::string& source_text);
AppConfig load_app_config(const std::string& path);

std::string fnv1a_hex(const std::string& text);

}  // namespace trajmix
