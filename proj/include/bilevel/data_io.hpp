#pragma once

#include <array>
#include <filesystem>
#include <random>
#include <tuple>

#include <nlohmann/json_fwd.hpp>

#include "bilevel/types.hpp"

namespace bilevel {

/// Deterministic RNG used throughout; same seed => same stream.
using Rng = std::mt19937_64;

/// Shuffle rows, then partition into (train, val, test) with
/// floor-allocated sizes; leftover rows go to train.
/// Throws std::invalid_argument("empty split") if any part would be empty.
std::tuple<Dataset, Dataset, Dataset> split_dataset(
    const Dataset& d, const std::array<double, 3>& fractions, RngSeed seed);

/// Row indices of the same partition (exposed for property tests).
std::tuple<std::vector<Eigen::Index>, std::vector<Eigen::Index>,
           std::vector<Eigen::Index>>
split_indices(Eigen::Index n, const std::array<double, 3>& fractions,
              RngSeed seed);

Dataset take_rows(const Dataset& d, const std::vector<Eigen::Index>& rows);

/// CSV with a header row: x0..x{d-1},y.
void save_csv(const Dataset& d, const std::filesystem::path& path);
Dataset load_csv(const std::filesystem::path& path, int num_classes = 0);

/// JSON manifest listing dataset files and their split roles.
void save_manifest(const std::filesystem::path& path,
                   const std::vector<std::pair<std::string, std::string>>&
                       files_and_roles);

// JSON serialization of the core types (exact round-trip for doubles).
void to_json(nlohmann::json& j, const Dataset& d);
void from_json(const nlohmann::json& j, Dataset& d);
void to_json(nlohmann::json& j, const HyperParams& hp);
void from_json(const nlohmann::json& j, HyperParams& hp);
void to_json(nlohmann::json& j, const StepSchedule& s);
void from_json(const nlohmann::json& j, StepSchedule& s);
void to_json(nlohmann::json& j, const TrajectoryTape& t);
void from_json(const nlohmann::json& j, TrajectoryTape& t);
void to_json(nlohmann::json& j, const Episode& e);
void from_json(const nlohmann::json& j, Episode& e);

}  // namespace bilevel
