#include "u3ds3/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <stdexcept>

namespace u3ds3 {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

double parse_double(const std::string& key, const std::string& value) {
  const char* begin = value.c_str();
  const char* end = begin + value.size();
  double v = 0.0;
  auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc{} || res.ptr != end)
    throw std::runtime_error("config: bad numeric value for " + key + ": '" + value + "'");
  return v;
}

std::int64_t parse_int(const std::string& key, const std::string& value) {
  const char* begin = value.c_str();
  const char* end = begin + value.size();
  std::int64_t v = 0;
  auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc{} || res.ptr != end)
    throw std::runtime_error("config: bad integer value for " + key + ": '" + value + "'");
  return v;
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  const char* begin = value.c_str();
  const char* end = begin + value.size();
  std::uint64_t v = 0;
  auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc{} || res.ptr != end)
    throw std::runtime_error("config: bad unsigned value for " + key + ": '" + value + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw std::runtime_error("config: bad boolean value for " + key + ": '" + value +
                           "' (use true/false)");
}

std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

void Config::validate() const {
  if (!(cell > 0.0)) throw std::runtime_error("config: cell must be positive");
  if (!(block > 0.0)) throw std::runtime_error("config: block must be positive");
  if (pts < 8) throw std::runtime_error("config: pts must be at least 8");
  if (gamma < 1) throw std::runtime_error("config: gamma must be at least 1");
  if (res < 1) throw std::runtime_error("config: res must be at least 1");
  if (dim != 128)
    throw std::runtime_error("config: dim must be 128 (the feature extractor output width)");
  if (epochs < 0) throw std::runtime_error("config: epochs must be non-negative");
  if (batch < 1) throw std::runtime_error("config: batch must be at least 1");
  if (!(lr >= 0.0)) throw std::runtime_error("config: lr must be non-negative");
  if (!(wd >= 0.0)) throw std::runtime_error("config: wd must be non-negative");
}

void Config::require_classes() const {
  if (classes < 1)
    throw std::runtime_error("config: --classes is required and must be at least 1");
}

void apply_config_entry(Config& cfg, const std::string& key, const std::string& value) {
  if (key == "cell") cfg.cell = parse_double(key, value);
  else if (key == "block") cfg.block = parse_double(key, value);
  else if (key == "pts") cfg.pts = static_cast<int>(parse_int(key, value));
  else if (key == "gamma") cfg.gamma = static_cast<int>(parse_int(key, value));
  else if (key == "classes") cfg.classes = static_cast<int>(parse_int(key, value));
  else if (key == "res") cfg.res = static_cast<int>(parse_int(key, value));
  else if (key == "dim") cfg.dim = static_cast<int>(parse_int(key, value));
  else if (key == "epochs") cfg.epochs = static_cast<int>(parse_int(key, value));
  else if (key == "batch") cfg.batch = static_cast<int>(parse_int(key, value));
  else if (key == "lr") cfg.lr = parse_double(key, value);
  else if (key == "wd") cfg.wd = parse_double(key, value);
  else if (key == "seed") cfg.seed = parse_u64(key, value);
  else if (key == "road_ransac") cfg.road_ransac = parse_bool(key, value);
  else if (key == "single_pathway") cfg.single_pathway = parse_bool(key, value);
  else if (key == "deterministic") cfg.deterministic = parse_bool(key, value);
  else throw std::runtime_error("config: unknown key '" + key + "'");
}

Config parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path);
  Config cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::string t = trim(line);
    if (t.empty()) continue;
    auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: " + path + " line " + std::to_string(lineno) +
                               ": expected 'key = value'");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    try {
      apply_config_entry(cfg, key, value);
    } catch (const std::exception& e) {
      throw std::runtime_error(path + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

std::string dump_config(const Config& cfg) {
  std::string s;
  s += "cell = " + fmt_double(cfg.cell) + "\n";
  s += "block = " + fmt_double(cfg.block) + "\n";
  s += "pts = " + std::to_string(cfg.pts) + "\n";
  s += "gamma = " + std::to_string(cfg.gamma) + "\n";
  s += "classes = " + std::to_string(cfg.classes) + "\n";
  s += "res = " + std::to_string(cfg.res) + "\n";
  s += "dim = " + std::to_string(cfg.dim) + "\n";
  s += "epochs = " + std::to_string(cfg.epochs) + "\n";
  s += "batch = " + std::to_string(cfg.batch) + "\n";
  s += "lr = " + fmt_double(cfg.lr) + "\n";
  s += "wd = " + fmt_double(cfg.wd) + "\n";
  s += "seed = " + std::to_string(cfg.seed) + "\n";
  s += std::string("road_ransac = ") + (cfg.road_ransac ? "true" : "false") + "\n";
  s += std::string("single_pathway = ") + (cfg.single_pathway ? "true" : "false") + "\n";
  s += std::string("deterministic = ") + (cfg.deterministic ? "true" : "false") + "\n";
  return s;
}

}  // namespace u3ds3
