#include "trajmix/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace trajmix {

bool TomlValue::as_bool() const {
    if (const bool* v = std::get_if<bool>(&data)) return *v;
    throw std::runtime_error("config value is not a boolean");
}

std::int64_t TomlValue::as_int() const {
    if (const std::int64_t* v = std::get_if<std::int64_t>(&data)) return *v;
    throw std::runtime_error("config value is not an integer");
}

double TomlValue::as_double() const {
    if (const double* v = std::get_if<double>(&data)) return *v;
    if (const std::int64_t* v = std::get_if<std::int64_t>(&data))
        return static_cast<double>(*v);
    throw std::runtime_error("config value is not a number");
}

const std::string& TomlValue::as_string() const {
    if (const std::string* v = std::get_if<std::string>(&data)) return *v;
    throw std::runtime_error("config value is not a string");
}

const std::vector<TomlValue>& TomlValue::as_array() const {
    if (const std::vector<TomlValue>* v = std::get_if<std::vector<TomlValue>>(&data)) return *v;
    throw std::runtime_error("config value is not an array");
}

const TomlValue& TomlTable::at(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw std::runtime_error("missing config key: " + key);
    return it->second;
}

bool TomlTable::get_bool(const std::string& key, bool fallback) const {
    return has(key) ? at(key).as_bool() : fallback;
}
std::int64_t TomlTable::get_int(const std::string& key, std::int64_t fallback) const {
    return has(key) ? at(key).as_int() : fallback;
}
double TomlTable::get_double(const std::string& key, double fallback) const {
    return has(key) ? at(key).as_double() : fallback;
}
std::string TomlTable::get_string(const std::string& key, const std::string& fallback) const {
    return has(key) ? at(key).as_string() : fallback;
}
std::vector<double> TomlTable::get_double_array(const std::string& key) const {
    std::vector<double> out;
    if (!has(key)) return out;
    for (const TomlValue& value : at(key).as_array()) out.push_back(value.as_double());
    return out;
}
std::vector<std::string> TomlTable::get_string_array(const std::string& key) const {
    std::vector<std::string> out;
    if (!has(key)) return out;
    for (const TomlValue& value : at(key).as_array()) out.push_back(value.as_string());
    return out;
}

namespace {

struct Cursor {
    const std::string& text;
    std::size_t pos = 0;
    int line = 1;

    bool done() const { return pos >= text.size(); }
    char peek() const { return text[pos]; }
    char take() {
        const char c = text[pos++];
        if (c == '\n') ++line;
        return c;
    }
    void skip_ws_inline() {
        while (!done() && (peek() == ' ' || peek() == '\t')) take();
    }
    [[noreturn]] void fail(const std::string& what) const {
        throw std::runtime_error("config parse error at line " + std::to_string(line) + ": " +
                                 what);
    }
};

TomlValue parse_value(Cursor& cur);

TomlValue parse_scalar_token(Cursor& cur) {
    std::string token;
    while (!cur.done()) {
        const char c = cur.peek();
        if (c == ',' || c == ']' || c == '#' || c == '\n' || c == ' ' || c == '\t' || c == '\r')
            break;
        token.push_back(cur.take());
    }
    if (token.empty()) cur.fail("expected a value");
    if (token == "true") return TomlValue{true};
    if (token == "false") return TomlValue{false};
    const bool looks_float = token.find_first_of(".eE") != std::string::npos &&
                             token.find_first_not_of("+-0123456789.eE") == std::string::npos;
    try {
        std::size_t used = 0;
        if (!looks_float) {
            const std::int64_t i = std::stoll(token, &used);
            if (used == token.size()) return TomlValue{i};
        }
        used = 0;
        const double d = std::stod(token, &used);
        if (used == token.size()) return TomlValue{d};
    } catch (...) {
    }
    cur.fail("unparseable value '" + token + "'");
}

TomlValue parse_value(Cursor& cur) {
    cur.skip_ws_inline();
    if (cur.done()) cur.fail("expected a value");
    const char c = cur.peek();
    if (c == '"') {
        cur.take();
        std::string out;
        while (!cur.done() && cur.peek() != '"') {
            char ch = cur.take();
            if (ch == '\\' && !cur.done()) {
                const char esc = cur.take();
                switch (esc) {
                    case 'n': ch = '\n'; break;
                    case 't': ch = '\t'; break;
                    case '"': ch = '"'; break;
                    case '\\': ch = '\\'; break;
                    default: cur.fail("unknown escape");
                }
            }
            out.push_back(ch);
        }
        if (cur.done()) cur.fail("unterminated string");
        cur.take();
        return TomlValue{out};
    }
    if (c == '[') {
        cur.take();
        std::vector<TomlValue> items;
        while (true) {
            // allow newlines inside arrays
            while (!cur.done() &&
                   (cur.peek() == ' ' || cur.peek() == '\t' || cur.peek() == '\n' ||
                    cur.peek() == '\r'))
                cur.take();
            if (cur.done()) cur.fail("unterminated array");
            if (cur.peek() == ']') {
                cur.take();
                break;
            }
            items.push_back(parse_value(cur));
            while (!cur.done() &&
                   (cur.peek() == ' ' || cur.peek() == '\t' || cur.peek() == '\n' ||
                    cur.peek() == '\r'))
                cur.take();
            if (!cur.done() && cur.peek() == ',') {
                cur.take();
                continue;
            }
            if (!cur.done() && cur.peek() == ']') {
                cur.take();
                break;
            }
            cur.fail("expected ',' or ']' in array");
        }
        return TomlValue{items};
    }
    return parse_scalar_token(cur);
}

}  // namespace

TomlTable parse_toml(const std::string& text) {
    TomlTable table;
    Cursor cur{text};
    std::string section;
    while (!cur.done()) {
        cur.skip_ws_inline();
        if (cur.done()) break;
        const char c = cur.peek();
        if (c == '\n' || c == '\r') {
            cur.take();
            continue;
        }
        if (c == '#') {
            while (!cur.done() && cur.peek() != '\n') cur.take();
            continue;
        }
        if (c == '[') {
            cur.take();
            std::string name;
            while (!cur.done() && cur.peek() != ']') name.push_back(cur.take());
            if (cur.done()) cur.fail("unterminated section header");
            cur.take();
            section = name;
            continue;
        }
        std::string key;
        while (!cur.done() && cur.peek() != '=' && cur.peek() != '\n') key.push_back(cur.take());
        if (cur.done() || cur.peek() != '=') cur.fail("expected '=' after key");
        cur.take();
        key.erase(key.find_last_not_of(" \t") + 1);
        key.erase(0, key.find_first_not_of(" \t"));
        if (key.empty()) cur.fail("empty key");
        TomlValue value = parse_value(cur);
        cur.skip_ws_inline();
        if (!cur.done() && cur.peek() == '#')
            while (!cur.done() && cur.peek() != '\n') cur.take();
        if (!cur.done() && cur.peek() == '\r') cur.take();
        if (!cur.done() && cur.peek() != '\n') cur.fail("trailing content after value");
        table.set(section.empty() ? key : section + "." + key, std::move(value));
    }
    return table;
}

TomlTable parse_toml_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_toml(text);
}

std::string fnv1a_hex(const std::string& text) {
    std::uint64_t hash = 1469598103934665603ull;
    for (const char c : text) {
        hash ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
        hash *= 1099511628211ull;
    }
    std::ostringstream out;
    out << std::hex << hash;
    return out.str();
}

AppConfig app_config_from_toml(const TomlTable& table, const std::string& source_text) {
    AppConfig cfg;
    cfg.config_hash = fnv1a_hex(source_text);

    const std::vector<std::string> names = table.get_string_array("model.variables");
    const std::vector<std::string> log_names = table.get_string_array("model.log_scale");
    for (const std::string& name : names) {
        const bool log_scale =
            std::find(log_names.begin(), log_names.end(), name) != log_names.end();
        cfg.model.variables.push_back({name, log_scale});
    }
    cfg.model.num_clusters = static_cast<int>(table.get_int("model.clusters", 6));
    if (table.has("model.subpops") &&
        std::holds_alternative<std::vector<TomlValue>>(table.at("model.subpops").data)) {
        for (const TomlValue& v : table.at("model.subpops").as_array())
            cfg.model.subpop_counts.push_back(static_cast<int>(v.as_int()));
    } else {
        const int gp = static_cast<int>(table.get_int("model.subpops", 4));
        cfg.model.subpop_counts.assign(cfg.model.variables.size(), gp);
    }
    cfg.model.spline_degree = static_cast<int>(table.get_int("model.spline_degree", 3));
    cfg.model.interior_knot_count = static_cast<int>(table.get_int("model.interior_knots", 8));
    cfg.model.covariate_dim = static_cast<int>(table.get_int("model.covariate_dim", 0));

    cfg.fit.batch_size = static_cast<int>(table.get_int("fit.batch", 256));
    cfg.fit.max_epochs = static_cast<int>(table.get_int("fit.epochs", 50));
    cfg.fit.local_iters = static_cast<int>(table.get_int("fit.local_iters", 15));
    cfg.fit.tol = table.get_double("fit.tol", 1e-6);
    cfg.fit.step = table.get_double("fit.step", 0.01);
    cfg.fit.decay = table.get_double("fit.decay", 0.9);
    cfg.fit.epsilon = table.get_double("fit.epsilon", 1e-8);
    cfg.fit.prior_sd = table.get_double("fit.prior_sd", 10.0);
    cfg.fit.eval_subsample = static_cast<int>(table.get_int("fit.eval_subsample", 2000));
    cfg.fit.convergence_window = static_cast<int>(table.get_int("fit.convergence_window", 5));
    cfg.fit.local_step = table.get_double("fit.local_step", 0.05);
    cfg.fit.checkpoint_every = static_cast<int>(table.get_int("fit.checkpoint_every", 0));

    cfg.protocol.n_folds = static_cast<int>(table.get_int("protocol.folds", 10));
    if (table.has("protocol.truncations"))
        cfg.protocol.truncations = table.get_double_array("protocol.truncations");
    if (table.has("protocol.bins")) {
        cfg.protocol.bins.clear();
        for (const TomlValue& pair : table.at("protocol.bins").as_array()) {
            const std::vector<TomlValue>& edges = pair.as_array();
            if (edges.size() != 2) throw std::runtime_error("protocol bins need [lo, hi] pairs");
            cfg.protocol.bins.push_back({edges[0].as_double(), edges[1].as_double()});
        }
    }
    cfg.protocol.n_samples = static_cast<int>(table.get_int("predict.samples", 1000));
    cfg.protocol.heldout_iters = static_cast<int>(table.get_int("predict.heldout_iters", 400));
    cfg.heldout.iters = cfg.protocol.heldout_iters;

    cfg.preprocess.roster = cfg.model.variables;
    cfg.preprocess.egfr_code = table.get_string("preprocess.egfr_code", "egfr");
    cfg.preprocess.creatinine_code =
        table.get_string("preprocess.creatinine_code", "creatinine");
    cfg.preprocess.min_creatinine_count =
        static_cast<int>(table.get_int("preprocess.min_creatinine", 5));
    cfg.preprocess.egfr_threshold = table.get_double("preprocess.egfr_threshold", 60.0);
    cfg.preprocess.min_separation_days =
        table.get_double("preprocess.min_separation_days", 90.0);

    cfg.simulate.snapshot = table.get_string("simulate.snapshot", "");
    cfg.simulate.t_lo = table.get_double("simulate.t_lo", 0.0);
    cfg.simulate.t_hi = table.get_double("simulate.t_hi", 8.0);
    cfg.simulate.noise_sd = table.get_double("simulate.noise_sd", 1.0);
    cfg.simulate.separation_sds = table.get_double("simulate.separation_sds", 5.0);
    cfg.simulate.rand_eff_corr = table.get_double("simulate.rand_eff_corr", 0.0);
    cfg.simulate.normal_covariates =
        static_cast<int>(table.get_int("simulate.normal_covariates", 2));
    cfg.simulate.bernoulli_covariates =
        static_cast<int>(table.get_int("simulate.bernoulli_covariates", 0));
    cfg.simulate.bernoulli_p = table.get_double("simulate.bernoulli_p", 0.5);
    cfg.simulate.p_unobserved = table.get_double_array("simulate.p_unobserved");
    cfg.simulate.obs_min = static_cast<int>(table.get_int("simulate.obs_min", 4));
    cfg.simulate.obs_max = static_cast<int>(table.get_int("simulate.obs_max", 12));
    return cfg;
}

AppConfig load_app_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return app_config_from_toml(parse_toml(text), text);
}

}  // namespace trajmix
