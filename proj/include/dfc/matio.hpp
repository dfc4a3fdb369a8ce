#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string_view>

#include <nlohmann/json_fwd.hpp>

namespace dfc {

// Matrix <-> structured text: {"shape": [rows, cols], "data": [[row0...], ...]}.
// Doubles serialize with shortest round-trip formatting, so save/load is bit-exact.
nlohmann::json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const nlohmann::json& j);

nlohmann::json vector_to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const nlohmann::json& j);

void save_json(const std::filesystem::path& file, const nlohmann::json& j);
nlohmann::json load_json(const std::filesystem::path& file);

// FNV-1a 64-bit hash, used for config fingerprints in run manifests.
std::uint64_t fnv1a(std::string_view bytes);

} // namespace dfc
