#include "dfc/matio.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "dfc/errors.hpp"

namespace dfc {

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return {{"shape", {m.rows(), m.cols()}}, {"data", std::move(rows)}};
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("shape") || !j.contains("data"))
        throw UsageError("matrix json must contain 'shape' and 'data'");
    const auto& shape = j.at("shape");
    if (!shape.is_array() || shape.size() != 2)
        throw UsageError("matrix 'shape' must be [rows, cols]");
    const auto r = shape[0].get<Eigen::Index>();
    const auto c = shape[1].get<Eigen::Index>();
    if (r < 0 || c < 0) throw UsageError("matrix shape must be non-negative");
    const auto& data = j.at("data");
    if (!data.is_array() || static_cast<Eigen::Index>(data.size()) != r)
        throw UsageError("matrix 'data' row count does not match shape");
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i) {
        const auto& row = data[static_cast<std::size_t>(i)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != c)
            throw UsageError("matrix 'data' column count does not match shape");
        for (Eigen::Index jj = 0; jj < c; ++jj) m(i, jj) = row[static_cast<std::size_t>(jj)].get<double>();
    }
    return m;
}

nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
    nlohmann::json arr = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
    return arr;
}

Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw UsageError("vector json must be an array");
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = j[static_cast<std::size_t>(i)].get<double>();
    return v;
}

void save_json(const std::filesystem::path& file, const nlohmann::json& j) {
    std::ofstream out(file);
    if (!out) throw UsageError("cannot open for writing: " + file.string());
    out << j.dump(2) << '\n';
}

nlohmann::json load_json(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw UsageError("cannot open for reading: " + file.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw UsageError("malformed json in " + file.string() + ": " + e.what());
    }
    return j;
}

std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ull;
    }
    return h;
}

} // namespace dfc
