#include "sublm/runconfig.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <stdexcept>

#include "sublm/util.hpp"

namespace sublm {

RunConfig::RunConfig(std::vector<KeySpec> specs) : specs_(std::move(specs)) {
  values_.resize(specs_.size());
  for (std::size_t i = 0; i < specs_.size(); ++i)
    values_[i].value = specs_[i].default_value;
}

std::size_t RunConfig::index_of(const std::string& key) const {
  for (std::size_t i = 0; i < specs_.size(); ++i)
    if (specs_[i].name == key) return i;
  throw std::invalid_argument("unknown config key '" + key + "'");
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": expected key=value");
    set(line.substr(0, eq), line.substr(eq + 1));
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  Entry& e = values_[index_of(key)];
  e.value = value;
  e.overridden = true;
}

bool RunConfig::is_default(const std::string& key) const {
  return !values_[index_of(key)].overridden;
}

const std::string& RunConfig::get(const std::string& key) const {
  return values_[index_of(key)].value;
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const std::string& v = get(key);
  errno = 0;
  char* end = nullptr;
  const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  // strtoull wraps negative input around instead of failing
  if (errno != 0 || end != v.c_str() + v.size() || v.empty() ||
      v.find('-') != std::string::npos)
    throw std::invalid_argument("config key '" + key + "': '" + v +
                                "' is not a non-negative integer");
  return x;
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& v = get(key);
  errno = 0;
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (errno != 0 || end != v.c_str() + v.size() || v.empty())
    throw std::invalid_argument("config key '" + key + "': '" + v +
                                "' is not a number");
  return x;
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config key '" + key + "': '" + v +
                              "' is not true/false");
}

namespace {
std::vector<std::string> comma_split(const std::string& v) {
  std::vector<std::string> parts = split(v, ',');
  if (parts.size() == 1 && parts[0].empty()) parts.clear();
  return parts;
}
}  // namespace

std::vector<std::uint64_t> RunConfig::get_u64_list(
    const std::string& key) const {
  std::vector<std::uint64_t> out;
  for (const std::string& p : comma_split(get(key))) {
    errno = 0;
    char* end = nullptr;
    const unsigned long long x = std::strtoull(p.c_str(), &end, 10);
    if (errno != 0 || end != p.c_str() + p.size() || p.empty() ||
        p.find('-') != std::string::npos)
      throw std::invalid_argument("config key '" + key + "': '" + p +
                                  "' is not a non-negative integer");
    out.push_back(x);
  }
  return out;
}

std::vector<double> RunConfig::get_double_list(const std::string& key) const {
  std::vector<double> out;
  for (const std::string& p : comma_split(get(key))) {
    errno = 0;
    char* end = nullptr;
    const double x = std::strtod(p.c_str(), &end);
    if (errno != 0 || end != p.c_str() + p.size() || p.empty())
      throw std::invalid_argument("config key '" + key + "': '" + p +
                                  "' is not a number");
    out.push_back(x);
  }
  return out;
}

std::string RunConfig::serialized() const {
  std::map<std::string, std::string> sorted;
  for (std::size_t i = 0; i < specs_.size(); ++i)
    sorted[specs_[i].name] = values_[i].value;
  std::string out;
  for (const auto& [k, v] : sorted) out += k + "=" + v + "\n";
  return out;
}

std::string RunConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(serialized())));
  return buf;
}

}  // namespace sublm
