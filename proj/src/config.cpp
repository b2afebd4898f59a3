#include "sae/config.hpp"

#include "sae/error.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace sae {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

// Drops a trailing comment, ignoring '#' inside quotes.
std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t k = 0; k < line.size(); ++k) {
    if (line[k] == '"') quoted = !quoted;
    if (line[k] == '#' && !quoted) return line.substr(0, k);
  }
  return line;
}

struct Value {
  std::string origin;
  std::string key;
  std::string raw;

  [[noreturn]] void fail(const std::string& what) const {
    throw InputError(origin + ": key '" + key + "': " + what + " (got '" + raw + "')");
  }

  double number() const { return number_of(raw); }

  double number_of(const std::string& s) const {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v)) fail("expected a number");
    return v;
  }

  long long integer() const {
    long long v = 0;
    const auto res = std::from_chars(raw.data(), raw.data() + raw.size(), v);
    if (res.ec != std::errc() || res.ptr != raw.data() + raw.size()) fail("expected an integer");
    return v;
  }

  int int32() const {
    const long long v = integer();
    if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) fail("integer out of range");
    return static_cast<int>(v);
  }

  bool boolean() const {
    if (raw == "true") return true;
    if (raw == "false") return false;
    fail("expected true or false");
  }

  std::string string_of(const std::string& s) const {
    if (s.size() < 2 || s.front() != '"' || s.back() != '"') fail("expected a quoted string");
    return s.substr(1, s.size() - 2);
  }

  std::string string() const { return string_of(raw); }

  std::vector<std::string> items() const {
    if (raw.size() < 2 || raw.front() != '[' || raw.back() != ']') fail("expected an array");
    std::vector<std::string> out;
    std::string item;
    bool quoted = false;
    for (char ch : raw.substr(1, raw.size() - 2)) {
      if (ch == '"') quoted = !quoted;
      if (ch == ',' && !quoted) {
        out.push_back(trim(item));
        item.clear();
      } else {
        item += ch;
      }
    }
    if (!trim(item).empty()) out.push_back(trim(item));
    for (const auto& s : out) {
      if (s.empty()) fail("empty array element");
    }
    return out;
  }

  std::vector<double> numbers() const {
    std::vector<double> out;
    for (const auto& s : items()) out.push_back(number_of(s));
    return out;
  }

  std::vector<std::string> strings() const {
    std::vector<std::string> out;
    for (const auto& s : items()) out.push_back(string_of(s));
    return out;
  }
};

}  // namespace

std::string scenario_name(Scenario s) { return s == Scenario::gaussian ? "0,0" : "e,u"; }

Scenario parse_scenario_name(const std::string& s) {
  if (s == "0,0" || s == "(0,0)") return Scenario::gaussian;
  if (s == "e,u" || s == "(e,u)") return Scenario::outliers;
  throw InputError("unknown scenario '" + s + "' (expected \"0,0\" or \"e,u\")");
}

ScenarioConfig parse_scenario(const std::string& text, const std::string& origin) {
  ScenarioConfig c;
  std::istringstream in(text);
  std::string line;
  std::set<std::string> seen;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw InputError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    }
    const Value v{origin, trim(line.substr(0, eq)), trim(line.substr(eq + 1))};
    if (!seen.insert(v.key).second) throw InputError(origin + ": key '" + v.key + "' given twice");
    const std::string& k = v.key;
    try {
      if (k == "scenario") c.scenario = parse_scenario_name(v.string());
      else if (k == "areas") c.areas = v.int32();
      else if (k == "area_size") c.area_size = v.int32();
      else if (k == "sample_size") c.sample_size = v.int32();
      else if (k == "units_per_block") c.units_per_block = v.int32();
      else if (k == "lambdas") c.lambdas = v.numbers();
      else if (k == "replicates") c.replicates = v.int32();
      else if (k == "base_seed") {
        if (v.integer() < 0) v.fail("expected a non-negative integer");
        c.base_seed = static_cast<std::uint64_t>(v.integer());
      }
      else if (k == "huber_c") c.huber_c = v.number();
      else if (k == "mse") c.mse = v.boolean();
      else if (k == "tau_grid") c.tau_grid = v.numbers();
      else if (k == "estimators") {
        c.estimators.clear();
        for (const auto& name : v.strings()) c.estimators.push_back(parse_estimator(name));
      }
      else if (k == "beta0") c.beta0 = v.number();
      else if (k == "beta1") c.beta1 = v.number();
      else if (k == "x_meanlog") c.x_meanlog = v.number();
      else if (k == "x_sdlog") c.x_sdlog = v.number();
      else if (k == "sigma2_u") c.sigma2_u = v.number();
      else if (k == "sigma2_e") c.sigma2_e = v.number();
      else if (k == "outlier_areas") c.outlier_areas = v.int32();
      else if (k == "sigma2_u_outlier") c.sigma2_u_outlier = v.number();
      else if (k == "sigma2_e_outlier") c.sigma2_e_outlier = v.number();
      else if (k == "contamination") c.contamination = v.number();
      else if (k == "max_failure_rate") c.max_failure_rate = v.number();
      else throw InputError(origin + ":" + std::to_string(lineno) + ": unknown key '" + k + "'");
    } catch (const InputError& e) {
      const std::string what = e.what();
      if (what.rfind(origin, 0) == 0) throw;
      throw InputError(origin + ": key '" + k + "': " + what);
    }
  }
  c.validate();
  return c;
}

ScenarioConfig read_scenario(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InputError("cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_scenario(ss.str(), path);
}

}  // namespace sae
