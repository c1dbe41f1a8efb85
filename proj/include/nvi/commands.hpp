#ifndef NVI_COMMANDS_HPP
#define NVI_COMMANDS_HPP

#include "nvi/config.hpp"

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace nvi::cli {

/// Process exit codes of the command-line tool.
enum ExitCode : int {
  exit_ok = 0,
  exit_usage = 1,
  exit_invalid_config = 2,
  exit_nan_loss = 3,
  exit_missing_checkpoint = 4,
  exit_io_error = 5,
};

/// Training produced a non-finite loss; a diagnostic dump has been written.
class NanLossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MissingCheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A CSV file with a header row and numeric cells.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  [[nodiscard]] bool has(const std::string& column) const;
  [[nodiscard]] std::vector<double> column(const std::string& name) const;
};

/// Reads a numeric CSV; non-numeric cells become NaN. Throws std::runtime_error if unreadable.
CsvTable read_csv(const std::filesystem::path& path);

/// Directory of restart r below the output directory.
std::filesystem::path restart_dir(const ExperimentConfig& config, int restart);

/// Trains every restart, evaluates it and writes diagnostics, checkpoints,
/// per-restart metrics, summary.csv and report.json below config.out.
/// Throws NanLossError, ConfigError or std::runtime_error.
void train(const ExperimentConfig& config, std::ostream& log);
/// Re-evaluates stored checkpoints and rewrites the summary. Throws
/// MissingCheckpointError when a restart has no checkpoint.
void evaluate(const ExperimentConfig& config, std::ostream& log);
/// Writes SVG figures into <run_dir>/plots for a restart directory or for
/// every restart below an output directory. Returns the files written.
std::vector<std::filesystem::path> plot(const std::filesystem::path& run_dir, std::ostream& log);

/// Wrappers that map failures to exit codes and print the message to `err`.
int cmd_train(const ExperimentConfig& config, std::ostream& log, std::ostream& err);
int cmd_eval(const ExperimentConfig& config, std::ostream& log, std::ostream& err);
int cmd_plot(const std::filesystem::path& run_dir, std::ostream& log, std::ostream& err);

}  // namespace nvi::cli

#endif
