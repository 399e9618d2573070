#include "ciseq/config.hpp"

#include <fstream>
#include <sstream>

#include "ciseq/common.hpp"

namespace ciseq {
namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

Config Config::load(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

Config Config::parse(const std::string& text, const std::string& origin) {
  Config cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    require(eq != std::string::npos, "config: missing '=' at " + origin + ":" +
                                         std::to_string(lineno));
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    require(!key.empty(), "config: empty key at " + origin + ":" +
                              std::to_string(lineno));
    cfg.kv_[key] = val;
  }
  return cfg;
}

void Config::apply_overrides(const std::vector<std::string>& kvs) {
  for (const auto& kv : kvs) {
    const size_t eq = kv.find('=');
    require(eq != std::string::npos && eq > 0,
            "config override must look like key=value, got: " + kv);
    kv_[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
}

bool Config::has(const std::string& key) const { return kv_.count(key) > 0; }

void Config::set(const std::string& key, const std::string& value) {
  kv_[key] = value;
}

std::string Config::str(const std::string& key) const {
  auto it = kv_.find(key);
  require(it != kv_.end(), "config: missing required key '" + key + "'");
  return it->second;
}

std::string Config::str_or(const std::string& key,
                           const std::string& def) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? def : it->second;
}

double Config::num(const std::string& key) const {
  const std::string v = str(key);
  size_t pos = 0;
  double d = 0;
  try {
    d = std::stod(v, &pos);
  } catch (const std::exception&) {
    require(false, "config: key '" + key + "' is not a number: " + v);
  }
  require(pos == v.size(), "config: key '" + key + "' is not a number: " + v);
  return d;
}

double Config::num_or(const std::string& key, double def) const {
  return has(key) ? num(key) : def;
}

int64_t Config::integer(const std::string& key) const {
  const std::string v = str(key);
  size_t pos = 0;
  long long d = 0;
  try {
    d = std::stoll(v, &pos);
  } catch (const std::exception&) {
    require(false, "config: key '" + key + "' is not an integer: " + v);
  }
  require(pos == v.size(),
          "config: key '" + key + "' is not an integer: " + v);
  return d;
}

int64_t Config::integer_or(const std::string& key, int64_t def) const {
  return has(key) ? integer(key) : def;
}

bool Config::flag_or(const std::string& key, bool def) const {
  if (!has(key)) return def;
  const std::string v = str(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  require(false, "config: key '" + key + "' is not a boolean: " + v);
  return def;
}

void Config::check_known(const std::set<std::string>& known) const {
  for (const auto& [k, v] : kv_) {
    require(known.count(k) > 0, "config: unknown key '" + k + "'");
  }
}

std::string Config::snapshot() const {
  std::string out;
  for (const auto& [k, v] : kv_) {
    out += k;
    out += " = ";
    out += v;
    out += "\n";
  }
  return out;
}

void Config::write_snapshot(const std::string& path) const {
  std::ofstream out(path);
  require(out.good(), "config: cannot write snapshot to " + path);
  out << snapshot();
}

}  // namespace ciseq
