#include "bilevel/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace bilevel {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

}  // namespace

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config " + path.string());
  RunConfig cfg;
  std::string line, section;
  while (std::getline(is, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[' && line.back() == ']') {
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line missing '=': " + line);
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    cfg.values_[section.empty() ? key : section + "." + key] = value;
  }
  return cfg;
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream os(path);
  // top-level keys first so they are not swallowed by a section on reload
  for (const auto& [key, value] : values_)
    if (key.find('.') == std::string::npos) os << key << " = " << value << "\n";
  std::string current_section;
  for (const auto& [key, value] : values_) {
    auto dot = key.find('.');
    if (dot == std::string::npos) continue;
    std::string section = key.substr(0, dot);
    if (section != current_section) {
      os << "[" << section << "]\n";
      current_section = section;
    }
    os << key.substr(dot + 1) << " = " << value << "\n";
  }
}

std::string RunConfig::get_str(const std::string& key,
                               const std::string& dflt) const {
  auto it = values_.find(key);
  return it == values_.end() ? dflt : it->second;
}

double RunConfig::get_double(const std::string& key, double dflt) const {
  auto it = values_.find(key);
  return it == values_.end() ? dflt : std::stod(it->second);
}

int RunConfig::get_int(const std::string& key, int dflt) const {
  auto it = values_.find(key);
  return it == values_.end() ? dflt : std::stoi(it->second);
}

std::uint64_t RunConfig::get_u64(const std::string& key,
                                 std::uint64_t dflt) const {
  auto it = values_.find(key);
  return it == values_.end() ? dflt : std::stoull(it->second);
}

std::vector<int> RunConfig::get_int_list(const std::string& key,
                                         const std::vector<int>& dflt) const {
  auto it = values_.find(key);
  if (it == values_.end()) return dflt;
  std::vector<int> out;
  std::stringstream ss(it->second);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stoi(trim(tok)));
  return out;
}

}  // namespace bilevel
