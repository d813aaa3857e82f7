#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "tssl/finetune.hpp"
#include "tssl/nn.hpp"
#include "tssl/pretext.hpp"

namespace tssl::cli {

enum class ValueType { string, boolean, integer, real, int_list, string_list };

struct SchemaEntry {
  ValueType type;
  nlohmann::json default_value;
  const char* description;
};

/// Flat, typed key-value configuration. Every key is validated against the
/// schema before any compute; unknown keys are rejected. Command-line
/// overrides (--set key=value) take precedence over the file.
class RunConfig {
 public:
  static const std::map<std::string, SchemaEntry>& schema();

  RunConfig();  // defaults
  static RunConfig from_json(const nlohmann::json& doc);
  static RunConfig from_file(const std::string& path);

  void set(const std::string& key, const nlohmann::json& value);
  void apply_override(const std::string& key, const std::string& raw_value);
  bool was_set(const std::string& key) const { return explicit_.count(key) > 0; }

  std::string str(const std::string& key) const;
  bool boolean(const std::string& key) const;
  std::int64_t integer(const std::string& key) const;
  double real(const std::string& key) const;
  std::vector<std::int64_t> int_list(const std::string& key) const;
  std::vector<std::string> string_list(const std::string& key) const;

  /// Full resolved snapshot (every schema key), written into manifests.
  nlohmann::json snapshot() const { return values_; }

  std::uint64_t master_seed() const;
  nn::MlpSpec encoder_spec(std::size_t input_dim) const;
  pretext::PretextConfig pretext_config() const;
  finetune::FitConfig fit_config(std::uint64_t seed) const;

 private:
  const nlohmann::json& get(const std::string& key, ValueType expected) const;
  nlohmann::json values_;
  std::set<std::string> explicit_;
};

/// "lo:hi:step" or several comma-separated ranges, parsed, merged,
/// deduplicated, ascending.
std::vector<double> parse_grid(const std::string& text);

}  // namespace tssl::cli
