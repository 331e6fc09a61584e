#include "genspec/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "genspec/error.hpp"

namespace genspec {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void Config::merge_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (!has(key)) throw UsageError(origin + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    values_[key] = trim(line.substr(eq + 1));
  }
}

void Config::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  merge_text(text.str(), path.string());
}

void Config::set(const std::string& key, const std::string& value) {
  if (!has(key)) throw UsageError("unknown key '" + key + "'");
  values_[key] = value;
}

const std::string& Config::str(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw UsageError("unknown key '" + key + "'");
  return it->second;
}

const std::string& Config::required(const std::string& key) const {
  const std::string& v = str(key);
  if (v.empty()) throw UsageError("missing required setting '" + key + "'");
  return v;
}

std::int64_t Config::integer(const std::string& key) const {
  const std::string& v = required(key);
  std::int64_t out = 0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size()) throw UsageError(key + ": '" + v + "' is not an integer");
  return out;
}

std::size_t Config::count(const std::string& key) const {
  const std::int64_t v = integer(key);
  if (v < 0) throw UsageError(key + " must be non-negative");
  return static_cast<std::size_t>(v);
}

double Config::real(const std::string& key) const {
  const std::string& v = required(key);
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::logic_error&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw UsageError(key + ": '" + v + "' is not a number");
  return out;
}

bool Config::boolean(const std::string& key) const {
  const std::string& v = required(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw UsageError(key + ": '" + v + "' is not a boolean");
}

std::filesystem::path Config::path(const std::string& key) const { return std::filesystem::path(str(key)); }

std::vector<double> Config::reals(const std::string& key) const {
  std::vector<double> out;
  std::istringstream in(required(key));
  for (std::string item; std::getline(in, item, ',');) {
    item = trim(item);
    std::size_t used = 0;
    try {
      out.push_back(std::stod(item, &used));
    } catch (const std::logic_error&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw UsageError(key + ": '" + item + "' is not a number");
  }
  return out;
}

std::string Config::resolved() const {
  std::ostringstream out;
  for (const auto& [k, v] : values_) out << k << " = " << v << '\n';
  return out.str();
}

}  // namespace genspec
