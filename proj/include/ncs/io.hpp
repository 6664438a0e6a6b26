#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "ncs/model.hpp"

namespace ncs {

using json = nlohmann::ordered_json;

struct RunParams {
    std::optional<int> horizon;
    std::optional<double> tol;
    std::optional<int> max_iter;
    std::optional<int> steps;
    std::optional<int> traj;
    std::optional<std::uint64_t> seed;
};

struct RunConfig {
    SystemModel model;
    RunParams params;
    std::string comment;
};

namespace detail {

inline void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    if (!obj.is_object()) throw Error("SchemaError", where + " must be an object");
    for (const auto& [key, val] : obj.items())
        if (!allowed.count(key)) throw Error("SchemaError", "unknown key '" + key + "' in " + where);
}

inline double number(const json& v, const std::string& what) {
    if (!v.is_number()) throw Error("SchemaError", what + " must be a number");
    return v.get<double>();
}

inline Mat parse_matrix(const json& v, const std::string& name) {
    if (!v.is_array() || v.empty()) throw Error("DimensionMismatch", name + " must be a nonempty array of rows");
    const std::size_t rows = v.size();
    std::size_t cols = 0;
    for (std::size_t i = 0; i < rows; ++i) {
        if (!v[i].is_array()) throw Error("DimensionMismatch", name + " row " + std::to_string(i) + " is not an array");
        if (i == 0) cols = v[i].size();
        if (v[i].size() != cols || cols == 0) throw Error("DimensionMismatch", name + " has ragged or empty rows");
    }
    Mat X(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) X(i, j) = number(v[i][j], name);
    return X;
}

inline Vec parse_vector(const json& v, const std::string& name) {
    if (!v.is_array()) throw Error("DimensionMismatch", name + " must be an array");
    Vec x(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) x(i) = number(v[i], name);
    return x;
}

inline std::vector<Vec> parse_vector_list(const json& v, const std::string& name) {
    if (!v.is_array()) throw Error("DimensionMismatch", name + " must be an array of vectors");
    std::vector<Vec> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(parse_vector(v[i], name));
    return out;
}

inline int integer(const json& v, const std::string& what) {
    if (!v.is_number_integer()) throw Error("SchemaError", what + " must be an integer");
    return v.get<int>();
}

}  // namespace detail

inline RunConfig parse_config(const json& doc) {
    using namespace detail;
    reject_unknown(doc, {"spec_version", "comment", "model", "params"}, "config");
    if (!doc.contains("spec_version") || doc["spec_version"] != 1)
        throw Error("SchemaError", "spec_version must be 1");
    if (!doc.contains("model")) throw Error("SchemaError", "missing 'model'");
    RunConfig cfg;
    if (doc.contains("comment")) {
        if (!doc["comment"].is_string()) throw Error("SchemaError", "comment must be a string");
        cfg.comment = doc["comment"].get<std::string>();
    }
    const json& m = doc["model"];
    reject_unknown(m, {"A", "B", "d", "Q", "R", "H", "xi", "q0", "x0", "u_pre", "x_pre"}, "model");
    for (const char* key : {"A", "B", "d", "Q", "R", "xi", "q0", "x0"})
        if (!m.contains(key)) throw Error("SchemaError", std::string("model is missing '") + key + "'");
    SystemModel& s = cfg.model;
    s.A = parse_matrix(m["A"], "A");
    s.B = parse_matrix(m["B"], "B");
    s.d = integer(m["d"], "d");
    s.Q = parse_matrix(m["Q"], "Q");
    s.R = parse_matrix(m["R"], "R");
    s.H = m.contains("H") ? parse_matrix(m["H"], "H") : Mat::Zero(s.A.rows(), s.A.rows());
    const Mat xi = parse_matrix(m["xi"], "xi");
    if (xi.rows() != 2 || xi.cols() != 2) throw Error("DimensionMismatch", "xi must be 2x2");
    s.chain.xi = xi;
    s.chain.q0 = number(m["q0"], "q0");
    s.init.x0 = parse_vector(m["x0"], "x0");
    if (m.contains("u_pre")) s.init.u_pre = parse_vector_list(m["u_pre"], "u_pre");
    if (m.contains("x_pre")) s.init.x_pre = parse_vector_list(m["x_pre"], "x_pre");

    if (doc.contains("params")) {
        const json& p = doc["params"];
        reject_unknown(p, {"horizon", "tol", "max_iter", "steps", "traj", "seed"}, "params");
        if (p.contains("horizon")) cfg.params.horizon = integer(p["horizon"], "horizon");
        if (p.contains("tol")) cfg.params.tol = number(p["tol"], "tol");
        if (p.contains("max_iter")) cfg.params.max_iter = integer(p["max_iter"], "max_iter");
        if (p.contains("steps")) cfg.params.steps = integer(p["steps"], "steps");
        if (p.contains("traj")) cfg.params.traj = integer(p["traj"], "traj");
        if (p.contains("seed")) {
            if (!p["seed"].is_number_unsigned()) throw Error("SchemaError", "seed must be a nonnegative integer");
            cfg.params.seed = p["seed"].get<std::uint64_t>();
        }
    }
    cfg.model = validate_model(std::move(cfg.model));
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("IoError", "cannot open " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error("SchemaError", std::string("invalid JSON: ") + e.what());
    }
    return parse_config(doc);
}

inline json to_json(const Mat& X) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        json r = json::array();
        for (Eigen::Index j = 0; j < X.cols(); ++j) r.push_back(X(i, j));
        rows.push_back(std::move(r));
    }
    return rows;
}

inline std::string format_number(double v) {
    if (!std::isfinite(v)) return "null";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// JSON text with every floating-point number printed to 17 significant digits.
inline void dump(const json& v, std::ostream& os, int indent = 0) {
    const std::string pad(static_cast<std::size_t>(indent) + 2, ' ');
    const std::string close(static_cast<std::size_t>(indent), ' ');
    switch (v.type()) {
        case json::value_t::object: {
            if (v.empty()) {
                os << "{}";
                break;
            }
            os << "{\n";
            bool first = true;
            for (const auto& [key, val] : v.items()) {
                if (!first) os << ",\n";
                first = false;
                os << pad << json(key).dump() << ": ";
                dump(val, os, indent + 2);
            }
            os << "\n" << close << "}";
            break;
        }
        case json::value_t::array: {
            bool flat = true;
            for (const auto& e : v) flat = flat && !e.is_structured();
            os << "[";
            bool first = true;
            for (const auto& e : v) {
                if (!first) os << (flat ? ", " : ",");
                first = false;
                if (!flat) os << "\n" << pad;
                dump(e, os, indent + 2);
            }
            if (!flat && !v.empty()) os << "\n" << close;
            os << "]";
            break;
        }
        case json::value_t::number_float: os << format_number(v.get<double>()); break;
        default: os << v.dump(); break;
    }
}

inline std::string dump(const json& v) {
    std::ostringstream os;
    dump(v, os);
    os << "\n";
    return os.str();
}

}  // namespace ncs
