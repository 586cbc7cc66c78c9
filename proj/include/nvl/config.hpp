#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nvl/dynamics.hpp"
#include "nvl/gibbs.hpp"

namespace nvl {

// Flat "section.key" -> text view of an INI file with typed accessors.
// Keys outside the schema are rejected so typos surface as ConfigError.
class Config {
 public:
  static Config from_file(const std::filesystem::path& path);
  static Config from_string(const std::string& text);

  // "section.key=value"; the key must be in the schema.
  void apply_override(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long get_long(const std::string& key, long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_list(const std::string& key, std::vector<double> fallback) const;

  // Potential parameters: every key of the [potential] section except name.
  std::map<std::string, double> potential_params() const;

  const std::map<std::string, std::string>& values() const { return values_; }
  std::string to_ini() const;  // canonical, sorted

 private:
  void check_key(const std::string& key) const;
  std::map<std::string, std::string> values_;
};

// Human-readable listing of the recognised sections and keys.
std::string config_schema_help();

EnsembleSpec ensemble_from_config(const Config& c);
McmcParams mcmc_from_config(const Config& c);
DynamicsParams dynamics_from_config(const Config& c, std::uint64_t seed);

}  // namespace nvl
