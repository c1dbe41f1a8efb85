#include "nvi/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace nvi::cli {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) {
    return "";
  }
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last) {
    throw ConfigError("invalid value for " + key + ": '" + value + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") {
    return true;
  }
  if (value == "false" || value == "0" || value == "no" || value == "off") {
    return false;
  }
  throw ConfigError("invalid value for " + key + ": '" + value + "' (expected true or false)");
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct Field {
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename T>
Field int_field(T ExperimentConfig::*member) {
  return {[member](ExperimentConfig& c, const std::string& k, const std::string& v) {
            c.*member = parse_number<T>(k, v);
          },
          [member](const ExperimentConfig& c) { return std::to_string(c.*member); }};
}

Field double_field(double ExperimentConfig::*member) {
  return {[member](ExperimentConfig& c, const std::string& k, const std::string& v) {
            c.*member = parse_number<double>(k, v);
          },
          [member](const ExperimentConfig& c) { return format_double(c.*member); }};
}

Field bool_field(bool ExperimentConfig::*member) {
  return {[member](ExperimentConfig& c, const std::string& k, const std::string& v) { c.*member = parse_bool(k, v); },
          [member](const ExperimentConfig& c) { return std::string(c.*member ? "true" : "false"); }};
}

Field string_field(std::string ExperimentConfig::*member) {
  return {[member](ExperimentConfig& c, const std::string&, const std::string& v) { c.*member = v; },
          [member](const ExperimentConfig& c) { return c.*member; }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table{
      {"experiment", string_field(&ExperimentConfig::experiment)},
      {"method", string_field(&ExperimentConfig::method)},
      {"K", int_field(&ExperimentConfig::K)},
      {"S", int_field(&ExperimentConfig::S)},
      {"eval_batches", int_field(&ExperimentConfig::eval_batches)},
      {"eval_batch_size", int_field(&ExperimentConfig::eval_batch_size)},
      {"iterations", int_field(&ExperimentConfig::iterations)},
      {"lr", double_field(&ExperimentConfig::lr)},
      {"seed", int_field(&ExperimentConfig::seed)},
      {"restarts", int_field(&ExperimentConfig::restarts)},
      {"resample", string_field(&ExperimentConfig::resample)},
      {"eval_resample", string_field(&ExperimentConfig::eval_resample)},
      {"schedule", string_field(&ExperimentConfig::schedule)},
      {"out", string_field(&ExperimentConfig::out)},
      {"paper_budget", bool_field(&ExperimentConfig::paper_budget)},
      {"hidden", int_field(&ExperimentConfig::hidden)},
      {"stl", bool_field(&ExperimentConfig::stl)},
      {"baseline", bool_field(&ExperimentConfig::baseline)},
      {"flow_layers", int_field(&ExperimentConfig::flow_layers)},
      {"log_every", int_field(&ExperimentConfig::log_every)},
      {"M", int_field(&ExperimentConfig::M)},
      {"stay", double_field(&ExperimentConfig::stay)},
      {"batch", int_field(&ExperimentConfig::batch)},
      {"train_instances", int_field(&ExperimentConfig::train_instances)},
      {"test_instances", int_field(&ExperimentConfig::test_instances)},
      {"train_data_seed", int_field(&ExperimentConfig::train_data_seed)},
      {"test_data_seed", int_field(&ExperimentConfig::test_data_seed)},
      {"gradient", string_field(&ExperimentConfig::gradient)},
      {"experimental", bool_field(&ExperimentConfig::experimental)},
  };
  return table;
}

void require(bool condition, const std::string& message) {
  if (!condition) {
    throw ConfigError(message);
  }
}

}  // namespace

void set_value(ExperimentConfig& config, const std::string& key, const std::string& value) {
  const auto it = fields().find(key);
  if (it == fields().end()) {
    throw ConfigError("unknown config key: " + key);
  }
  it->second.set(config, key, value);
}

void apply_assignment(ExperimentConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("expected key=value, got '" + assignment + "'");
  }
  const std::string key = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  if (key.empty()) {
    throw ConfigError("empty key in '" + assignment + "'");
  }
  set_value(config, key, value);
}

void apply_config_text(ExperimentConfig& config, std::istream& in, const std::string& source) {
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) {
      line.erase(hash);
    }
    line = trim(line);
    if (line.empty()) {
      continue;
    }
    try {
      apply_assignment(config, line);
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(number) + ": " + e.what());
    }
  }
}

void load_config_file(ExperimentConfig& config, const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open config file: " + path);
  }
  apply_config_text(config, in, path);
}

ResamplePolicy parse_resample_policy(const std::string& name) {
  if (name == "never") {
    return ResamplePolicy::never;
  }
  if (name == "always") {
    return ResamplePolicy::always;
  }
  if (name == "adaptive") {
    return ResamplePolicy::adaptive;
  }
  throw ConfigError("unknown resample policy: " + name);
}

void validate(const ExperimentConfig& c) {
  require(c.experiment == "anneal" || c.experiment == "hmm", "experiment must be anneal or hmm, got " + c.experiment);
  require(c.K >= 2, "K must be at least 2");
  require(c.S >= 1, "S must be positive");
  require(c.eval_batches >= 1, "eval_batches must be positive");
  require(c.eval_batch_size >= 1, "eval_batch_size must be positive");
  require(c.iterations >= 0, "iterations must be non-negative");
  require(c.lr > 0.0, "lr must be positive");
  require(c.restarts >= 1, "restarts must be positive");
  require(c.hidden >= 1, "hidden must be positive");
  require(c.log_every >= 1, "log_every must be positive");
  require(!c.out.empty(), "out must not be empty");
  for (const std::string* policy : {&c.resample, &c.eval_resample}) {
    if (*policy != "method") {
      parse_resample_policy(*policy);
    }
  }

  if (c.experiment == "anneal") {
    Method m{};
    try {
      m = parse_method(c.method);
    } catch (const std::invalid_argument&) {
      throw ConfigError("unknown anneal method: " + c.method);
    }
    const MethodTraits t = method_traits(m);
    require(c.schedule == "method" || c.schedule == "linear" || c.schedule == "learned",
            "schedule must be method, linear or learned");
    require(!(m == Method::svi && c.K != 2), "method svi has no intermediate densities and requires K = 2");
    require(!((m == Method::avo || m == Method::avo_flow) && c.schedule == "learned"),
            "avo optimises a fixed linear schedule; schedule = learned is not allowed");
    require(!(t.flow && c.flow_layers < 1), "flow methods need flow_layers >= 1");
    if (c.paper_budget) {
      require(c.K * c.S == 288, "paper_budget requires K * S = 288, got " + std::to_string(c.K) + " * " +
                                    std::to_string(c.S) + " = " + std::to_string(c.K * c.S));
    }
  } else {
    try {
      hmm::parse_heuristic(c.method);
    } catch (const std::invalid_argument&) {
      throw ConfigError("unknown hmm heuristic: " + c.method + " (expected none, gmm or neural)");
    }
    require(c.M >= 1, "M must be positive");
    require(c.stay > 0.0 && c.stay <= 1.0, "stay must lie in (0, 1]");
    require(c.batch >= 1, "batch must be positive");
    require(c.train_instances >= 1, "train_instances must be positive");
    require(c.test_instances >= 2, "test_instances must be at least 2");
    require(c.gradient == "partial" || c.gradient == "full", "gradient must be partial or full");
    require(!(c.gradient == "full" && !c.experimental), "gradient = full requires experimental = true");
    require(c.schedule == "method", "hmm runs have no annealing schedule");
    require(c.resample != "adaptive" && c.eval_resample != "adaptive",
            "hmm runs resample after every step or not at all; adaptive is not supported");
  }
}

std::map<std::string, std::string> to_map(const ExperimentConfig& config) {
  std::map<std::string, std::string> out;
  for (const auto& [key, field] : fields()) {
    out[key] = field.get(config);
  }
  return out;
}

std::string to_text(const ExperimentConfig& config) {
  std::ostringstream os;
  for (const auto& [key, value] : to_map(config)) {
    os << key << " = " << value << "\n";
  }
  return os.str();
}

std::uint64_t restart_seed(const ExperimentConfig& config, int restart) {
  return config.seed + static_cast<std::uint64_t>(restart);
}

AnnealConfig to_anneal_config(const ExperimentConfig& c, int restart) {
  AnnealConfig a;
  a.method = parse_method(c.method);
  a.K = c.K;
  a.S = c.S;
  a.iterations = c.iterations;
  a.lr = c.lr;
  a.seed = restart_seed(c, restart);
  a.hidden = c.hidden;
  a.flow_layers = c.flow_layers;
  a.stl = c.stl;
  a.baseline = c.baseline;
  if (c.resample != "method") {
    a.resample = parse_resample_policy(c.resample);
  }
  if (c.schedule != "method") {
    a.learned_schedule = c.schedule == "learned";
  }
  return a;
}

hmm::HmmSpec to_hmm_spec(const ExperimentConfig& c) { return hmm::HmmSpec::standard(c.K, c.M, c.stay); }

hmm::HmmConfig to_hmm_config(const ExperimentConfig& c, int restart) {
  hmm::HmmConfig h;
  h.heuristic = hmm::parse_heuristic(c.method);
  h.S = c.S;
  h.batch = c.batch;
  h.iterations = c.iterations;
  h.hidden = c.hidden;
  h.lr = c.lr;
  h.seed = restart_seed(c, restart);
  h.resample = c.resample != "never";
  h.mode = c.gradient == "full" ? hmm::GradientMode::full : hmm::GradientMode::partial;
  h.experimental = c.experimental;
  return h;
}

std::optional<ResamplePolicy> anneal_eval_policy(const ExperimentConfig& c) {
  if (c.eval_resample == "method") {
    return std::nullopt;
  }
  return parse_resample_policy(c.eval_resample);
}

bool hmm_eval_resample(const ExperimentConfig& c) { return c.eval_resample != "method" && c.eval_resample != "never"; }

ExperimentConfig resolve_config(const ConfigSources& sources) {
  ExperimentConfig c;
  if (sources.env_seed && !sources.env_seed->empty()) {
    try {
      set_value(c, "seed", *sources.env_seed);
    } catch (const ConfigError&) {
      throw ConfigError("NVI_SEED is not a valid seed: '" + *sources.env_seed + "'");
    }
  }
  if (sources.path) {
    load_config_file(c, *sources.path);
  }
  for (const std::string& a : sources.assignments) {
    apply_assignment(c, a);
  }
  if (sources.seed) {
    c.seed = *sources.seed;
  }
  if (sources.restarts) {
    c.restarts = *sources.restarts;
  }
  if (sources.out) {
    c.out = *sources.out;
  }
  validate(c);
  return c;
}

}  // namespace nvi::cli
