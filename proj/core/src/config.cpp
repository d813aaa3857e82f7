#include "tssl/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "tssl/eval.hpp"

namespace tssl::cli {

const std::map<std::string, SchemaEntry>& RunConfig::schema() {
  using J = nlohmann::json;
  static const std::map<std::string, SchemaEntry> entries = {
      {"seed", {ValueType::integer, 0, "master seed for every derived stream"}},
      {"data.input", {ValueType::string, "", "input CSV path"}},
      {"data.label_column", {ValueType::string, "", "label column name ('' = unlabeled)"}},
      {"data.synthetic", {ValueType::boolean, false, "generate a synthetic corpus instead of reading a CSV"}},
      {"synth.classes", {ValueType::integer, 10, "synthetic: number of classes"}},
      {"synth.features", {ValueType::integer, 512, "synthetic: number of features"}},
      {"synth.redundant_groups", {ValueType::integer, 64, "synthetic: redundant feature groups"}},
      {"synth.samples_per_class", {ValueType::integer, 100, "synthetic: examples per class"}},
      {"synth.class_spread", {ValueType::real, 0.7, "synthetic: stddev of class latent means"}},
      {"synth.feature_noise", {ValueType::real, 0.22, "synthetic: per-feature noise stddev"}},
      {"preprocess.log2", {ValueType::boolean, true, "apply log2(x+1) before standardization"}},
      {"split.pretrain", {ValueType::real, 0.8, "pretraining partition fraction"}},
      {"split.finetune", {ValueType::real, 0.1, "fine-tuning partition fraction"}},
      {"split.test", {ValueType::real, 0.1, "test partition fraction"}},
      {"split.validation", {ValueType::real, 0.15, "validation carve from pretrain and fine-tune"}},
      {"encoder.hidden_dims", {ValueType::int_list, J::array({256, 256, 256, 256}), "encoder layer sizes"}},
      {"encoder.batchnorm", {ValueType::boolean, true, "batch-norm in the encoder"}},
      {"pretext.method", {ValueType::string, "scarf", "scarf | vime | byol"}},
      {"pretext.epochs", {ValueType::integer, 20, "pretraining epochs"}},
      {"pretext.batch_size", {ValueType::integer, 128, "pretraining batch size"}},
      {"pretext.learning_rate", {ValueType::real, 1e-3, "pretraining Adam learning rate"}},
      {"scarf.tau", {ValueType::real, 1.0, "InfoNCE temperature"}},
      {"scarf.variant", {ValueType::string, "standard_infonce", "standard_infonce | as_printed"}},
      {"corruption.fraction", {ValueType::real, 0.3, "SCARF corrupted-feature fraction c"}},
      {"corruption.mask_prob", {ValueType::real, 0.3, "VIME/BYOL mask probability p_m"}},
      {"corruption.seed", {ValueType::integer, 0, "corruption stream override (0 = derive from master)"}},
      {"vime.alpha", {ValueType::real, 1.0, "VIME feature-loss weight"}},
      {"vime.masked_only_mse", {ValueType::boolean, false, "restrict the MSE to masked positions"}},
      {"byol.lambda", {ValueType::real, 0.99, "EMA decay of the target branch"}},
      {"byol.symmetrize", {ValueType::boolean, false, "add the swapped-view loss term"}},
      {"byol.corrupt_both", {ValueType::boolean, false, "corrupt the online view as well"}},
      {"finetune.batch_size", {ValueType::integer, 8, "fine-tuning batch size"}},
      {"finetune.max_epochs", {ValueType::integer, 100, "fine-tuning epoch cap"}},
      {"finetune.patience", {ValueType::integer, 30, "early-stopping patience"}},
      {"finetune.learning_rate", {ValueType::real, 1e-3, "fine-tuning Adam learning rate"}},
      {"finetune.frozen", {ValueType::boolean, false, "freeze the encoder during fine-tuning"}},
      {"finetune.proportion", {ValueType::real, 1.0, "label fraction p for cmd_finetune"}},
      {"finetune.checkpoint", {ValueType::string, "", "encoder checkpoint path ('' = out dir default)"}},
      {"finetune.from_scratch", {ValueType::boolean, false, "ignore any checkpoint (baseline)"}},
      {"sweep.kind", {ValueType::string, "proportion", "proportion | pretrain_size | architecture"}},
      {"sweep.grid", {ValueType::string, "0.02:0.3:0.01", "label-fraction grid lo:hi:step[,...]"}},
      {"sweep.seeds_per_point", {ValueType::integer, 5, "repetitions per grid point"}},
      {"sweep.methods", {ValueType::string_list, J::array({"scarf", "vime", "byol"}), "pretext methods to sweep"}},
      {"sweep.fixed_p", {ValueType::real, 0.1, "fine-tune fraction for the pretrain-size sweep"}},
      {"sweep.q_grid", {ValueType::string, "0.01:0.05:0.01,0.05:1:0.05", "pretraining-size grid"}},
      {"sweep.depths", {ValueType::int_list, J::array({2, 3, 4, 5, 6, 7, 8, 9, 10}), "architecture sweep depths"}},
      {"sweep.widths", {ValueType::int_list, J::array({256, 1024}), "architecture sweep widths"}},
      {"sweep.gain_lo", {ValueType::real, 0.02, "gain integration lower bound"}},
      {"sweep.gain_hi", {ValueType::real, 0.3, "gain integration upper bound"}},
      {"collapse.rel_tol", {ValueType::real, 1e-6, "collapse tolerance relative to sigma_1"}},
      {"collapse.abs_floor", {ValueType::real, 1e-12, "absolute collapse tolerance floor"}},
      {"report.redact_timing", {ValueType::boolean, false, "write wall_ms as 0 for bit-reproducible output"}},
  };
  return entries;
}

RunConfig::RunConfig() {
  for (const auto& [key, entry] : schema()) values_[key] = entry.default_value;
}

namespace {

bool type_matches(const nlohmann::json& v, ValueType type) {
  switch (type) {
    case ValueType::string: return v.is_string();
    case ValueType::boolean: return v.is_boolean();
    case ValueType::integer: return v.is_number_integer();
    case ValueType::real: return v.is_number();
    case ValueType::int_list:
      if (!v.is_array()) return false;
      return std::all_of(v.begin(), v.end(),
                         [](const auto& e) { return e.is_number_integer(); });
    case ValueType::string_list:
      if (!v.is_array()) return false;
      return std::all_of(v.begin(), v.end(),
                         [](const auto& e) { return e.is_string(); });
  }
  return false;
}

const char* type_name(ValueType type) {
  switch (type) {
    case ValueType::string: return "string";
    case ValueType::boolean: return "bool";
    case ValueType::integer: return "int";
    case ValueType::real: return "real";
    case ValueType::int_list: return "int list";
    case ValueType::string_list: return "string list";
  }
  return "?";
}

}  // namespace

void RunConfig::set(const std::string& key, const nlohmann::json& value) {
  const auto it = schema().find(key);
  if (it == schema().end()) fail(ErrorKind::config, "unknown config key '", key, "'");
  if (!type_matches(value, it->second.type))
    fail(ErrorKind::config, "config key '", key, "' expects ",
         type_name(it->second.type), ", got ", value.dump());
  values_[key] = value;
  explicit_.insert(key);
}

RunConfig RunConfig::from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) fail(ErrorKind::config, "config document must be an object");
  RunConfig config;
  for (const auto& [key, value] : doc.items()) config.set(key, value);
  return config;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open config: ", path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, path, ": invalid JSON: ", e.what());
  }
  return from_json(doc);
}

void RunConfig::apply_override(const std::string& key, const std::string& raw) {
  const auto it = schema().find(key);
  if (it == schema().end()) fail(ErrorKind::config, "unknown config key '", key, "'");
  nlohmann::json value;
  switch (it->second.type) {
    case ValueType::string: value = raw; break;
    case ValueType::boolean:
      if (raw == "true" || raw == "1") value = true;
      else if (raw == "false" || raw == "0") value = false;
      else fail(ErrorKind::config, "config key '", key, "': bad bool '", raw, "'");
      break;
    case ValueType::integer: {
      char* end = nullptr;
      const long long v = std::strtoll(raw.c_str(), &end, 10);
      if (end == raw.c_str() || *end != '\0')
        fail(ErrorKind::config, "config key '", key, "': bad int '", raw, "'");
      value = v;
      break;
    }
    case ValueType::real: {
      char* end = nullptr;
      const double v = std::strtod(raw.c_str(), &end);
      if (end == raw.c_str() || *end != '\0' || !std::isfinite(v))
        fail(ErrorKind::config, "config key '", key, "': bad real '", raw, "'");
      value = v;
      break;
    }
    case ValueType::int_list:
    case ValueType::string_list: {
      value = nlohmann::json::array();
      std::size_t start = 0;
      while (start <= raw.size()) {
        const std::size_t comma = raw.find(',', start);
        const std::string item = raw.substr(start, comma - start);
        if (!item.empty()) {
          if (it->second.type == ValueType::int_list) {
            char* end = nullptr;
            const long long v = std::strtoll(item.c_str(), &end, 10);
            if (end == item.c_str() || *end != '\0')
              fail(ErrorKind::config, "config key '", key, "': bad int '", item, "'");
            value.push_back(v);
          } else {
            value.push_back(item);
          }
        }
        if (comma == std::string::npos) break;
        start = comma + 1;
      }
      break;
    }
  }
  set(key, value);
}

const nlohmann::json& RunConfig::get(const std::string& key, ValueType expected) const {
  const auto it = schema().find(key);
  if (it == schema().end()) fail(ErrorKind::config, "unknown config key '", key, "'");
  if (it->second.type != expected)
    fail(ErrorKind::config, "config key '", key, "' is ", type_name(it->second.type),
         ", accessed as ", type_name(expected));
  return values_.at(key);
}

std::string RunConfig::str(const std::string& key) const {
  return get(key, ValueType::string).get<std::string>();
}
bool RunConfig::boolean(const std::string& key) const {
  return get(key, ValueType::boolean).get<bool>();
}
std::int64_t RunConfig::integer(const std::string& key) const {
  return get(key, ValueType::integer).get<std::int64_t>();
}
double RunConfig::real(const std::string& key) const {
  const auto it = schema().find(key);
  if (it != schema().end() && it->second.type == ValueType::real)
    return values_.at(key).get<double>();
  return static_cast<double>(integer(key));
}
std::vector<std::int64_t> RunConfig::int_list(const std::string& key) const {
  return get(key, ValueType::int_list).get<std::vector<std::int64_t>>();
}
std::vector<std::string> RunConfig::string_list(const std::string& key) const {
  return get(key, ValueType::string_list).get<std::vector<std::string>>();
}

std::uint64_t RunConfig::master_seed() const {
  return static_cast<std::uint64_t>(integer("seed"));
}

nn::MlpSpec RunConfig::encoder_spec(std::size_t input_dim) const {
  nn::MlpSpec spec;
  spec.input_dim = input_dim;
  for (const auto dim : int_list("encoder.hidden_dims")) {
    if (dim < 1) fail(ErrorKind::config, "encoder.hidden_dims entries must be >= 1");
    spec.hidden_dims.push_back(static_cast<std::size_t>(dim));
  }
  spec.use_batchnorm = boolean("encoder.batchnorm");
  spec.activation = nn::Activation::relu;
  spec.plain_last = false;
  spec.validate();
  return spec;
}

pretext::PretextConfig RunConfig::pretext_config() const {
  pretext::PretextConfig cfg;
  cfg.method = pretext::method_from_string(str("pretext.method"));
  cfg.epochs = static_cast<std::size_t>(integer("pretext.epochs"));
  cfg.batch_size = static_cast<std::size_t>(integer("pretext.batch_size"));
  cfg.learning_rate = real("pretext.learning_rate");
  cfg.tau = real("scarf.tau");
  const std::string variant = str("scarf.variant");
  if (variant == "standard_infonce")
    cfg.variant = pretext::InfoNceVariant::standard_infonce;
  else if (variant == "as_printed")
    cfg.variant = pretext::InfoNceVariant::as_printed;
  else
    fail(ErrorKind::config, "scarf.variant must be standard_infonce|as_printed, got '",
         variant, "'");
  cfg.alpha = real("vime.alpha");
  cfg.masked_only_mse = boolean("vime.masked_only_mse");
  cfg.ema_decay = real("byol.lambda");
  cfg.symmetrize = boolean("byol.symmetrize");
  cfg.corrupt_both = boolean("byol.corrupt_both");
  cfg.corruption_fraction = real("corruption.fraction");
  cfg.mask_probability = real("corruption.mask_prob");
  cfg.corruption_seed = static_cast<std::uint64_t>(integer("corruption.seed"));
  cfg.seed = master_seed();
  return cfg;
}

finetune::FitConfig RunConfig::fit_config(std::uint64_t seed) const {
  finetune::FitConfig cfg;
  cfg.batch_size = static_cast<std::size_t>(integer("finetune.batch_size"));
  cfg.max_epochs = static_cast<std::size_t>(integer("finetune.max_epochs"));
  cfg.patience = static_cast<std::size_t>(integer("finetune.patience"));
  cfg.learning_rate = real("finetune.learning_rate");
  cfg.seed = seed;
  cfg.validate();
  return cfg;
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> grid;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = text.find(',', start);
    const std::string range = text.substr(start, comma - start);
    if (!range.empty()) {
      double lo = 0, hi = 0, step = 0;
      if (std::sscanf(range.c_str(), "%lf:%lf:%lf", &lo, &hi, &step) != 3)
        fail(ErrorKind::config, "bad grid range '", range, "' (expected lo:hi:step)");
      for (double v : eval::make_grid(lo, hi, step)) grid.push_back(v);
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (grid.empty()) fail(ErrorKind::config, "grid '", text, "' is empty");
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end(),
                         [](double a, double b) { return std::fabs(a - b) < 1e-12; }),
             grid.end());
  return grid;
}

}  // namespace tssl::cli
