#include "trajmix/snapshot.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace trajmix {

namespace {

using nlohmann::json;

json matrix_to_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const json& rows) {
    const Eigen::Index r = static_cast<Eigen::Index>(rows.size());
    if (r == 0) return Eigen::MatrixXd(0, 0);
    const Eigen::Index c = static_cast<Eigen::Index>(rows.at(0).size());
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rows.at(i).at(j).get<double>();
    return m;
}

json vector_to_json(const Eigen::VectorXd& v) {
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
    return out;
}

Eigen::VectorXd vector_from_json(const json& arr) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(arr.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = arr.at(i).get<double>();
    return v;
}

}  // namespace

std::string snapshot_to_json(const ModelParams& params) {
    json doc;
    doc["version"] = 1;
    json model;
    json variables = json::array();
    for (const VariableSpec& spec : params.config.variables)
        variables.push_back({{"name", spec.name}, {"log_scale", spec.log_scale}});
    model["variables"] = std::move(variables);
    model["num_clusters"] = params.config.num_clusters;
    model["subpop_counts"] = params.config.subpop_counts;
    model["covariate_dim"] = params.config.covariate_dim;
    model["spline"] = {{"degree", params.basis.degree()},
                       {"interior_knots", params.basis.interior_knots()},
                       {"boundary", {params.basis.lo(), params.basis.hi()}}};
    model["train_span"] = {params.train_lo, params.train_hi};
    doc["model"] = std::move(model);

    json vars = json::array();
    for (const VarParams& vp : params.vars) {
        vars.push_back({{"fixed_effect", vector_to_json(vp.fixed_effect)},
                        {"subpop_curves", matrix_to_json(vp.subpop_curves)},
                        {"subpop_mix", matrix_to_json(vp.subpop_mix)},
                        {"amplitude", vp.kernel.amplitude},
                        {"lengthscale", vp.kernel.lengthscale},
                        {"noise_var", vp.noise_var}});
    }
    doc["params"] = {{"per_variable", std::move(vars)},
                     {"cluster_weights", matrix_to_json(params.cluster_weights)},
                     {"rand_eff_cov", matrix_to_json(params.rand_eff_cov)}};
    return doc.dump(2);
}

ModelParams snapshot_from_json(const std::string& text) {
    const json doc = json::parse(text);
    if (!doc.contains("version")) throw std::runtime_error("snapshot missing version field");
    if (doc.at("version").get<int>() != 1) throw std::runtime_error("unsupported snapshot version");

    ModelParams params;
    const json& model = doc.at("model");
    for (const json& var : model.at("variables"))
        params.config.variables.push_back(
            {var.at("name").get<std::string>(), var.at("log_scale").get<bool>()});
    params.config.num_clusters = model.at("num_clusters").get<int>();
    params.config.subpop_counts = model.at("subpop_counts").get<std::vector<int>>();
    params.config.covariate_dim = model.at("covariate_dim").get<int>();
    const json& spline = model.at("spline");
    params.basis = SplineBasis(spline.at("degree").get<int>(),
                               spline.at("interior_knots").get<std::vector<double>>(),
                               spline.at("boundary").at(0).get<double>(),
                               spline.at("boundary").at(1).get<double>());
    params.config.spline_degree = params.basis.degree();
    params.config.interior_knot_count = static_cast<int>(params.basis.interior_knots().size());
    params.train_lo = model.at("train_span").at(0).get<double>();
    params.train_hi = model.at("train_span").at(1).get<double>();

    const json& p = doc.at("params");
    for (const json& var : p.at("per_variable")) {
        VarParams vp;
        vp.fixed_effect = vector_from_json(var.at("fixed_effect"));
        vp.subpop_curves = matrix_from_json(var.at("subpop_curves"));
        vp.subpop_mix = matrix_from_json(var.at("subpop_mix"));
        vp.kernel.amplitude = var.at("amplitude").get<double>();
        vp.kernel.lengthscale = var.at("lengthscale").get<double>();
        vp.noise_var = var.at("noise_var").get<double>();
        params.vars.push_back(std::move(vp));
    }
    params.cluster_weights = matrix_from_json(p.at("cluster_weights"));
    params.rand_eff_cov = matrix_from_json(p.at("rand_eff_cov"));
    params.validate();
    return params;
}

void save_snapshot(const ModelParams& params, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open snapshot file for writing: " + path);
    out << snapshot_to_json(params) << "\n";
}

ModelParams load_snapshot(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open snapshot file: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return snapshot_from_json(text);
}

}  // namespace trajmix
