#include "bilevel/data_io.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace bilevel {

std::tuple<std::vector<Eigen::Index>, std::vector<Eigen::Index>,
           std::vector<Eigen::Index>>
split_indices(Eigen::Index n, const std::array<double, 3>& fractions,
              RngSeed seed) {
  for (double f : fractions)
    if (!(f > 0)) throw std::invalid_argument("empty split");
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  Rng rng(seed.value);
  std::shuffle(perm.begin(), perm.end(), rng);

  auto n_val = static_cast<Eigen::Index>(std::floor(fractions[1] * n));
  auto n_test = static_cast<Eigen::Index>(std::floor(fractions[2] * n));
  Eigen::Index n_train = n - n_val - n_test;  // remainder goes to train
  if (n_train <= 0 || n_val <= 0 || n_test <= 0)
    throw std::invalid_argument("empty split");

  auto cut1 = perm.begin() + n_train;
  auto cut2 = cut1 + n_val;
  return {std::vector<Eigen::Index>(perm.begin(), cut1),
          std::vector<Eigen::Index>(cut1, cut2),
          std::vector<Eigen::Index>(cut2, perm.end())};
}

Dataset take_rows(const Dataset& d, const std::vector<Eigen::Index>& rows) {
  Dataset out;
  out.X.resize(static_cast<Eigen::Index>(rows.size()), d.dim());
  out.y.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.X.row(static_cast<Eigen::Index>(i)) = d.X.row(rows[i]);
    out.y[static_cast<Eigen::Index>(i)] = d.y[rows[i]];
  }
  out.num_classes = d.num_classes;
  out.name = d.name;
  return out;
}

std::tuple<Dataset, Dataset, Dataset> split_dataset(
    const Dataset& d, const std::array<double, 3>& fractions, RngSeed seed) {
  if (d.n() < 3) throw std::invalid_argument("split_dataset: need n >= 3");
  auto [itr, ival, itest] = split_indices(d.n(), fractions, seed);
  auto tr = take_rows(d, itr);
  auto val = take_rows(d, ival);
  auto test = take_rows(d, itest);
  tr.name = d.name + "/train";
  val.name = d.name + "/val";
  test.name = d.name + "/test";
  return {tr, val, test};
}

void save_csv(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string());
  for (Eigen::Index j = 0; j < d.dim(); ++j) os << "x" << j << ",";
  os << "y\n";
  os.precision(17);
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    for (Eigen::Index j = 0; j < d.dim(); ++j) os << d.X(i, j) << ",";
    os << d.y[i] << "\n";
  }
}

Dataset load_csv(const std::filesystem::path& path, int num_classes) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("empty csv");
  Eigen::Index dim = static_cast<Eigen::Index>(
                         std::count(line.begin(), line.end(), ',') + 1) -
                     1;
  std::vector<std::vector<double>> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (static_cast<Eigen::Index>(row.size()) != dim + 1)
      throw std::runtime_error("csv row width mismatch");
    rows.push_back(std::move(row));
  }
  Dataset d;
  d.num_classes = num_classes;
  d.name = path.stem().string();
  d.X.resize(static_cast<Eigen::Index>(rows.size()), dim);
  d.y.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (Eigen::Index j = 0; j < dim; ++j)
      d.X(static_cast<Eigen::Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
    d.y[static_cast<Eigen::Index>(i)] = rows[i].back();
  }
  d.validate();
  return d;
}

void save_manifest(const std::filesystem::path& path,
                   const std::vector<std::pair<std::string, std::string>>&
                       files_and_roles) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& [file, role] : files_and_roles)
    j.push_back({{"file", file}, {"role", role}});
  std::ofstream os(path);
  os << j.dump(2) << "\n";
}

namespace {

nlohmann::json vec_to_json(const Vector& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Vector vec_from_json(const nlohmann::json& j) {
  auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

void to_json(nlohmann::json& j, const Dataset& d) {
  std::vector<std::vector<double>> rows;
  rows.reserve(static_cast<std::size_t>(d.n()));
  for (Eigen::Index i = 0; i < d.n(); ++i)
    rows.emplace_back(d.X.row(i).begin(), d.X.row(i).end());
  j = {{"X", rows},
       {"y", vec_to_json(d.y)},
       {"num_classes", d.num_classes},
       {"name", d.name}};
}

void from_json(const nlohmann::json& j, Dataset& d) {
  auto rows = j.at("X").get<std::vector<std::vector<double>>>();
  Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  Eigen::Index dim = n > 0 ? static_cast<Eigen::Index>(rows[0].size()) : 0;
  d.X.resize(n, dim);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index k = 0; k < dim; ++k)
      d.X(i, k) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
  d.y = vec_from_json(j.at("y"));
  d.num_classes = j.at("num_classes").get<int>();
  d.name = j.at("name").get<std::string>();
}

void to_json(nlohmann::json& j, const HyperParams& hp) {
  j = {{"values", vec_to_json(hp.values)}};
  if (hp.shape_hint)
    j["shape_hint"] = {hp.shape_hint->first, hp.shape_hint->second};
  if (hp.bounds)
    j["bounds"] = {{"lower", vec_to_json(hp.bounds->first)},
                   {"upper", vec_to_json(hp.bounds->second)}};
}

void from_json(const nlohmann::json& j, HyperParams& hp) {
  hp.values = vec_from_json(j.at("values"));
  hp.shape_hint.reset();
  hp.bounds.reset();
  if (j.contains("shape_hint"))
    hp.shape_hint = {j["shape_hint"][0].get<Eigen::Index>(),
                     j["shape_hint"][1].get<Eigen::Index>()};
  if (j.contains("bounds"))
    hp.bounds = {vec_from_json(j["bounds"]["lower"]),
                 vec_from_json(j["bounds"]["upper"])};
}

void to_json(nlohmann::json& j, const StepSchedule& s) {
  j = {{"etas", s.etas}, {"momentum", s.momentum}};
}

void from_json(const nlohmann::json& j, StepSchedule& s) {
  s.etas = j.at("etas").get<std::vector<double>>();
  s.momentum = j.at("momentum").get<double>();
}

void to_json(nlohmann::json& j, const TrajectoryTape& t) {
  nlohmann::json its = nlohmann::json::array();
  for (const auto& w : t.iterates) its.push_back(vec_to_json(w));
  nlohmann::json aux = nlohmann::json::array();
  for (const auto& v : t.aux) aux.push_back(vec_to_json(v));
  j = {{"iterates", its}, {"schedule", t.schedule}, {"aux", aux}};
}

void from_json(const nlohmann::json& j, TrajectoryTape& t) {
  t.iterates.clear();
  for (const auto& w : j.at("iterates")) t.iterates.push_back(vec_from_json(w));
  t.schedule = j.at("schedule").get<StepSchedule>();
  t.aux.clear();
  for (const auto& v : j.at("aux")) t.aux.push_back(vec_from_json(v));
}

void to_json(nlohmann::json& j, const Episode& e) {
  j = {{"train", e.train},
       {"val", e.val},
       {"task_id", e.task_id},
       {"disjoint", e.disjoint}};
}

void from_json(const nlohmann::json& j, Episode& e) {
  e.train = j.at("train").get<Dataset>();
  e.val = j.at("val").get<Dataset>();
  e.task_id = j.at("task_id").get<int>();
  e.disjoint = j.at("disjoint").get<bool>();
}

}  // namespace bilevel
