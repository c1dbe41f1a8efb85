#ifndef NVI_CONFIG_HPP
#define NVI_CONFIG_HPP

#include "nvi/anneal.hpp"
#include "nvi/hmm.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace nvi::cli {

/// Raised for malformed files, unknown keys, bad values and inconsistent combinations.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything a train, eval or plot command needs. Fields that only one
/// experiment reads are ignored by the other.
struct ExperimentConfig {
  std::string experiment = "anneal";
  /// Anneal method name, or heuristic variant (none | gmm | neural) for hmm.
  std::string method = "nvir_star";
  int K = 8;
  int S = 36;
  int eval_batches = 100;
  int eval_batch_size = 100;
  int iterations = 20000;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  int restarts = 1;
  /// method | never | always | adaptive
  std::string resample = "method";
  /// Resampling policy used by evaluation; `method` follows the training
  /// policy for anneal and means no resampling for hmm.
  std::string eval_resample = "method";
  /// method | linear | learned
  std::string schedule = "method";
  std::string out = "runs/default";
  /// Rejects anneal runs whose K * S differs from 288.
  bool paper_budget = true;
  int hidden = 50;
  bool stl = true;
  bool baseline = true;
  int flow_layers = 32;
  /// Every n-th iteration is kept in the report's schedule trajectory.
  int log_every = 100;

  // hmm
  int M = 4;
  double stay = 0.9;
  int batch = 10;
  int train_instances = 2000;
  int test_instances = 200;
  std::uint64_t train_data_seed = 1;
  std::uint64_t test_data_seed = 2;
  /// partial | full
  std::string gradient = "partial";
  bool experimental = false;
};

/// Parses `key = value` lines; `#` starts a comment. Unknown keys and
/// unparsable values raise ConfigError.
void apply_config_text(ExperimentConfig& config, std::istream& in, const std::string& source = "config");
/// Applies one `key=value` assignment.
void apply_assignment(ExperimentConfig& config, const std::string& assignment);
void set_value(ExperimentConfig& config, const std::string& key, const std::string& value);

/// Reads a config file; a missing file is a ConfigError.
void load_config_file(ExperimentConfig& config, const std::string& path);

/// Checks ranges and method/flag combinations; throws ConfigError.
void validate(const ExperimentConfig& config);

/// Canonical `key = value` rendering that round-trips through apply_config_text.
std::string to_text(const ExperimentConfig& config);
std::map<std::string, std::string> to_map(const ExperimentConfig& config);

/// Seed of restart r.
std::uint64_t restart_seed(const ExperimentConfig& config, int restart);

AnnealConfig to_anneal_config(const ExperimentConfig& config, int restart);
hmm::HmmConfig to_hmm_config(const ExperimentConfig& config, int restart);
hmm::HmmSpec to_hmm_spec(const ExperimentConfig& config);
/// Evaluation resampling for anneal runs; nullopt keeps the method's policy.
std::optional<ResamplePolicy> anneal_eval_policy(const ExperimentConfig& config);
/// Whether hmm evaluation resamples.
bool hmm_eval_resample(const ExperimentConfig& config);

ResamplePolicy parse_resample_policy(const std::string& name);

/// Command-line layer over a config file, lowest precedence first:
/// built-in defaults, NVI_SEED, the file, --set assignments, explicit flags.
struct ConfigSources {
  std::optional<std::string> path;
  std::optional<std::string> env_seed;
  std::vector<std::string> assignments;
  std::optional<std::uint64_t> seed;
  std::optional<int> restarts;
  std::optional<std::string> out;
};

ExperimentConfig resolve_config(const ConfigSources& sources);

}  // namespace nvi::cli

#endif
