#include "nvi/commands.hpp"

#include "json.hpp"
#include "nvi/svg.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>

namespace nvi::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Salt separating evaluation randomness from training randomness.
constexpr std::uint64_t kEvalSalt = 0x6576616cULL;
/// Samples per level kept for the scatter plots.
constexpr int kPlotSamples = 1000;
/// Window of the rolling ESS curve.
constexpr int kRollingWindow = 100;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class CsvWriter {
 public:
  CsvWriter(const fs::path& path, const std::vector<std::string>& header) : path_(path), out_(path) {
    if (!out_) {
      throw std::runtime_error("cannot write " + path.string());
    }
    row(header);
  }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      out_ << (i ? "," : "") << cells[i];
    }
    out_ << "\n";
  }

  void values(const std::vector<double>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      out_ << (i ? "," : "") << fmt(cells[i]);
    }
    out_ << "\n";
  }

  void flush() { out_.flush(); }

 private:
  fs::path path_;
  std::ofstream out_;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out << text;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) {
    s += x;
  }
  return v.empty() ? std::numeric_limits<double>::quiet_NaN() : s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) {
    return 0.0;
  }
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) {
    s += (x - m) * (x - m);
  }
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

struct Metrics {
  std::vector<double> log_Z;
  std::vector<double> ess;

  void append(const Metrics& other) {
    log_Z.insert(log_Z.end(), other.log_Z.begin(), other.log_Z.end());
    ess.insert(ess.end(), other.ess.begin(), other.ess.end());
  }
  [[nodiscard]] json to_json() const {
    return {{"mean_log_Z_hat", mean_of(log_Z)}, {"sd_log_Z_hat", sd_of(log_Z)}, {"mean_ess", mean_of(ess)},
            {"sd_ess", sd_of(ess)},           {"count", log_Z.size()}};
  }
};

struct RestartOutcome {
  int restart = 0;
  std::uint64_t seed = 0;
  Metrics metrics;
  std::vector<double> final_betas;
  json trajectory = json::array();
  double seconds = 0.0;
};

std::uint64_t eval_seed(const ExperimentConfig& c, int restart) { return rng::combine(restart_seed(c, restart), kEvalSalt); }

ExperimentConfig restart_config(const ExperimentConfig& c, int restart) {
  ExperimentConfig r = c;
  r.seed = restart_seed(c, restart);
  r.restarts = 1;
  r.out = restart_dir(c, restart).string();
  return r;
}

fs::path checkpoint_path(const ExperimentConfig& c, int restart) { return restart_dir(c, restart) / "checkpoint.txt"; }

void save_checkpoint(const ParameterStore& store, const fs::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  store.save(out);
}

void load_checkpoint(ParameterStore& store, const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw MissingCheckpointError("missing checkpoint: " + path.string());
  }
  store.load(in);
}

void write_summary(const ExperimentConfig& c, const std::vector<RestartOutcome>& outcomes, const std::string& report_name) {
  const fs::path out(c.out);
  Metrics pooled;
  {
    CsvWriter per(out / "restarts.csv", {"restart", "seed", "mean_log_Z_hat", "sd_log_Z_hat", "mean_ess", "sd_ess"});
    for (const RestartOutcome& r : outcomes) {
      per.row({std::to_string(r.restart), std::to_string(r.seed), fmt(mean_of(r.metrics.log_Z)),
               fmt(sd_of(r.metrics.log_Z)), fmt(mean_of(r.metrics.ess)), fmt(sd_of(r.metrics.ess))});
      pooled.append(r.metrics);
    }
  }
  {
    CsvWriter summary(out / "summary.csv",
                      {"method", "K", "S", "restarts", "mean_log_Z_hat", "sd_log_Z_hat", "mean_ess", "sd_ess"});
    summary.row({c.method, std::to_string(c.K), std::to_string(c.S), std::to_string(outcomes.size()), fmt(mean_of(pooled.log_Z)),
                 fmt(sd_of(pooled.log_Z)), fmt(mean_of(pooled.ess)), fmt(sd_of(pooled.ess))});
  }
  json report;
  report["config"] = to_map(c);
  report["final"] = pooled.to_json();
  report["restarts"] = json::array();
  for (const RestartOutcome& r : outcomes) {
    json j;
    j["restart"] = r.restart;
    j["seed"] = r.seed;
    j["directory"] = restart_dir(c, r.restart).string();
    j["final"] = r.metrics.to_json();
    if (!r.final_betas.empty()) {
      j["betas"] = r.final_betas;
    }
    if (!r.trajectory.empty()) {
      j["beta_trajectory"] = r.trajectory;
    }
    j["wall_clock_seconds"] = r.seconds;
    report["restarts"].push_back(j);
  }
  write_text(out / report_name, report.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// anneal

void dump_anneal_failure(const fs::path& dir, std::uint64_t iteration, const StepDiagnostics& d,
                         const ParameterStore& store) {
  std::ostringstream os;
  os << "non-finite loss at iteration " << iteration << "\n";
  os << "log_Z_hat " << fmt(d.log_Z_hat) << " ess " << fmt(d.ess) << " finite " << d.finite << "\n";
  for (const LevelDiagnostics& l : d.levels) {
    os << "level " << l.level << " loss " << fmt(l.loss_estimate) << " ess " << fmt(l.ess) << " mean_log_v "
       << fmt(l.mean_log_v) << " var_log_v " << fmt(l.var_log_v) << " baseline " << fmt(l.baseline) << "\n";
  }
  for (const ad::Parameter* p : store.all()) {
    os << p->name << " value_norm " << fmt(p->value.norm()) << " finite " << p->value.allFinite() << "\n";
  }
  write_text(dir / "nan_dump.txt", os.str());
}

Metrics evaluate_anneal(const ExperimentConfig& c, const AnnealExperiment& ex, const fs::path& dir, int restart) {
  const std::uint64_t seed = eval_seed(c, restart);
  const EvalSummary s = ex.evaluate(c.eval_batches, c.eval_batch_size, seed, anneal_eval_policy(c));
  Metrics m{s.log_Z_hat, s.ess};
  {
    CsvWriter csv(dir / "eval.csv", {"batch", "log_Z_hat", "ess"});
    for (std::size_t b = 0; b < s.log_Z_hat.size(); ++b) {
      csv.values({static_cast<double>(b), s.log_Z_hat[b], s.ess[b]});
    }
  }
  {
    const std::vector<double> kl = ex.quadrature_kls();
    const AnnealingPath linear(c.K);
    const AnnealedSequence linear_seq(ex.sequence().initial(), ex.sequence().final_target(), linear);
    const std::vector<double> kl_linear = quadrature_stepwise_kl(linear_seq);
    CsvWriter csv(dir / "step_kl.csv", {"k", "kl", "kl_linear"});
    for (std::size_t i = 0; i < kl.size(); ++i) {
      csv.values({static_cast<double>(i + 2), kl[i], kl_linear[i]});
    }
  }
  {
    const std::vector<ad::Matrix> levels = ex.level_samples(kPlotSamples, seed);
    CsvWriter csv(dir / "samples.csv", {"level", "z1", "z2"});
    for (std::size_t k = 0; k < levels.size(); ++k) {
      for (Eigen::Index i = 0; i < levels[k].rows(); ++i) {
        csv.values({static_cast<double>(k + 1), levels[k](i, 0), levels[k](i, 1)});
      }
    }
  }
  return m;
}

RestartOutcome train_anneal(const ExperimentConfig& c, int restart, std::ostream& log) {
  const auto start = std::chrono::steady_clock::now();
  const fs::path dir = restart_dir(c, restart);
  fs::create_directories(dir);
  write_text(dir / "config.txt", to_text(restart_config(c, restart)));

  AnnealExperiment ex(to_anneal_config(c, restart));
  RestartOutcome outcome;
  outcome.restart = restart;
  outcome.seed = restart_seed(c, restart);

  std::vector<std::string> header{"iteration", "log_Z_hat", "ess", "loss"};
  for (int k = 2; k <= c.K; ++k) {
    header.push_back("beta_" + std::to_string(k));
  }
  CsvWriter diag(dir / "diagnostics.csv", header);
  CsvWriter levels(dir / "levels.csv", {"iteration", "level", "loss_estimate", "ess", "log_Z_hat", "baseline",
                                        "mean_log_v", "var_log_v"});
  std::optional<std::uint64_t> failed;
  std::uint64_t next = 0;
  const auto on_step = [&](std::uint64_t it, const StepDiagnostics& d) {
    next = it + 1;
    double loss = 0.0;
    for (const LevelDiagnostics& l : d.levels) {
      loss += l.loss_estimate;
    }
    const ad::Vector betas = ex.path().betas();
    std::vector<double> row{static_cast<double>(it), d.log_Z_hat, d.ess, loss};
    row.insert(row.end(), betas.data(), betas.data() + betas.size());
    diag.values(row);
    for (const LevelDiagnostics& l : d.levels) {
      levels.values({static_cast<double>(it), static_cast<double>(l.level), l.loss_estimate, l.ess, l.log_Z_hat,
                     l.baseline, l.mean_log_v, l.var_log_v});
    }
    if (!std::isfinite(loss) || !d.finite) {
      dump_anneal_failure(dir, it, d, ex.store());
      failed = it;
      return false;
    }
    if (it % static_cast<std::uint64_t>(c.log_every) == 0 || it + 1 == static_cast<std::uint64_t>(c.iterations)) {
      outcome.trajectory.push_back(json{{"iteration", it}, {"betas", std::vector<double>(row.begin() + 4, row.end())}});
      log << "restart " << restart << " iteration " << it << " log_Z_hat " << d.log_Z_hat << " ess " << d.ess
          << "\n";
    }
    return true;
  };
  try {
    ex.train(on_step);
  } catch (const DegenerateWeightsError&) {
    dump_anneal_failure(dir, next, StepDiagnostics{{}, std::numeric_limits<double>::quiet_NaN(), 0.0, false},
                        ex.store());
    failed = next;
  }
  diag.flush();
  levels.flush();
  if (failed) {
    throw NanLossError("non-finite loss at iteration " + std::to_string(*failed) + "; see " +
                       (dir / "nan_dump.txt").string());
  }
  save_checkpoint(ex.store(), dir / "checkpoint.txt");
  const ad::Vector betas = ex.path().betas();
  outcome.final_betas.assign(betas.data(), betas.data() + betas.size());
  outcome.metrics = evaluate_anneal(c, ex, dir, restart);
  outcome.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  log << "restart " << restart << " mean log_Z_hat " << mean_of(outcome.metrics.log_Z) << " mean ess "
      << mean_of(outcome.metrics.ess) << "\n";
  return outcome;
}

RestartOutcome eval_anneal(const ExperimentConfig& c, int restart) {
  const auto start = std::chrono::steady_clock::now();
  AnnealExperiment ex(to_anneal_config(c, restart));
  load_checkpoint(ex.store(), checkpoint_path(c, restart));
  RestartOutcome outcome;
  outcome.restart = restart;
  outcome.seed = restart_seed(c, restart);
  const ad::Vector betas = ex.path().betas();
  outcome.final_betas.assign(betas.data(), betas.data() + betas.size());
  outcome.metrics = evaluate_anneal(c, ex, restart_dir(c, restart), restart);
  outcome.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return outcome;
}

// ---------------------------------------------------------------------------
// hmm

Metrics evaluate_hmm(const ExperimentConfig& c, const hmm::HmmExperiment& ex, const fs::path& dir, int restart) {
  const std::vector<hmm::HmmInstance> test = hmm::simulate(ex.spec(), c.test_data_seed, c.test_instances);
  const std::vector<hmm::HmmEvalRow> rows = ex.evaluate(test, c.eval_batch_size, eval_seed(c, restart), hmm_eval_resample(c));
  Metrics m;
  CsvWriter csv(dir / "metrics.csv", {"instance_id", "variant", "log_Z_hat", "ess"});
  for (const hmm::HmmEvalRow& r : rows) {
    csv.row({std::to_string(r.instance), c.method, fmt(r.log_Z_hat), fmt(r.ess)});
    m.log_Z.push_back(r.log_Z_hat);
    m.ess.push_back(r.ess);
  }
  return m;
}

RestartOutcome train_hmm(const ExperimentConfig& c, int restart, std::ostream& log) {
  const auto start = std::chrono::steady_clock::now();
  const fs::path dir = restart_dir(c, restart);
  fs::create_directories(dir);
  write_text(dir / "config.txt", to_text(restart_config(c, restart)));

  hmm::HmmExperiment ex(to_hmm_spec(c), to_hmm_config(c, restart));
  const std::vector<hmm::HmmInstance> train_set = hmm::simulate(ex.spec(), c.train_data_seed, c.train_instances);
  RestartOutcome outcome;
  outcome.restart = restart;
  outcome.seed = restart_seed(c, restart);

  CsvWriter diag(dir / "diagnostics.csv", {"iteration", "log_Z_hat", "ess", "kl"});
  std::optional<std::uint64_t> failed;
  ex.train(train_set, [&](std::uint64_t it, const hmm::HmmStepDiagnostics& d) {
    diag.values({static_cast<double>(it), d.mean_log_Z_hat, d.mean_ess, d.mean_kl});
    if (!d.finite || !std::isfinite(d.mean_kl)) {
      std::ostringstream os;
      os << "non-finite loss at iteration " << it << "\nmean_log_Z_hat " << fmt(d.mean_log_Z_hat) << " mean_ess "
         << fmt(d.mean_ess) << " mean_kl " << fmt(d.mean_kl) << "\n";
      for (const ad::Parameter* p : ex.store().all()) {
        os << p->name << " value_norm " << fmt(p->value.norm()) << " grad_finite " << p->grad.allFinite() << "\n";
      }
      write_text(dir / "nan_dump.txt", os.str());
      failed = it;
      return false;
    }
    if (it % static_cast<std::uint64_t>(c.log_every) == 0 || it + 1 == static_cast<std::uint64_t>(c.iterations)) {
      log << "restart " << restart << " iteration " << it << " log_Z_hat " << d.mean_log_Z_hat << " ess "
          << d.mean_ess << "\n";
    }
    return true;
  });
  diag.flush();
  if (failed) {
    throw NanLossError("non-finite loss at iteration " + std::to_string(*failed) + "; see " +
                       (dir / "nan_dump.txt").string());
  }
  save_checkpoint(ex.store(), dir / "checkpoint.txt");
  outcome.metrics = evaluate_hmm(c, ex, dir, restart);
  outcome.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  log << "restart " << restart << " mean log_Z_hat " << mean_of(outcome.metrics.log_Z) << " mean ess "
      << mean_of(outcome.metrics.ess) << "\n";
  return outcome;
}

RestartOutcome eval_hmm(const ExperimentConfig& c, int restart) {
  const auto start = std::chrono::steady_clock::now();
  hmm::HmmExperiment ex(to_hmm_spec(c), to_hmm_config(c, restart));
  load_checkpoint(ex.store(), checkpoint_path(c, restart));
  RestartOutcome outcome;
  outcome.restart = restart;
  outcome.seed = restart_seed(c, restart);
  outcome.metrics = evaluate_hmm(c, ex, restart_dir(c, restart), restart);
  outcome.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return outcome;
}

// ---------------------------------------------------------------------------
// plots

std::vector<double> iota_like(std::size_t n) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = static_cast<double>(i);
  }
  return x;
}

fs::path write_svg(const fs::path& dir, const std::string& name, const std::string& svg) {
  fs::create_directories(dir);
  const fs::path path = dir / name;
  write_text(path, svg);
  return path;
}

void plot_scatter(const fs::path& run, const fs::path& plots, std::vector<fs::path>& written, std::ostream& log) {
  if (!fs::exists(run / "samples.csv") || !fs::exists(run / "config.txt") || !fs::exists(run / "checkpoint.txt")) {
    return;
  }
  ExperimentConfig c;
  load_config_file(c, (run / "config.txt").string());
  if (c.experiment != "anneal") {
    return;
  }
  AnnealExperiment ex(to_anneal_config(c, 0));
  load_checkpoint(ex.store(), run / "checkpoint.txt");
  const CsvTable samples = read_csv(run / "samples.csv");
  const std::vector<double> level = samples.column("level");
  const std::vector<double> z1 = samples.column("z1");
  const std::vector<double> z2 = samples.column("z2");

  const int n = 120;
  const double lim = ex.target().radius() * 1.5;
  Grid2d grid{n, -lim, lim};
  const ad::Matrix pts = grid.points();
  for (int k = 1; k <= ex.sequence().length(); ++k) {
    const ad::Vector lg = ex.sequence().log_gamma(k, pts);
    GridField field;
    field.values.resize(n, n);
    const double peak = lg.maxCoeff();
    // Grid2d::points enumerates x-major; values(i, j) needs y on rows.
    for (int a = 0; a < n; ++a) {
      for (int b = 0; b < n; ++b) {
        const Eigen::Index idx = static_cast<Eigen::Index>(a) * n + b;
        const double x = pts(idx, 0);
        const double y = pts(idx, 1);
        const int j = static_cast<int>(std::lround((x + lim) / grid.step()));
        const int i = static_cast<int>(std::lround((y + lim) / grid.step()));
        field.values(i, j) = std::exp(lg(idx) - peak);
      }
    }
    field.x0 = field.y0 = -lim;
    field.x1 = field.y1 = lim;
    ad::Matrix p(0, 2);
    std::vector<std::array<double, 2>> rows;
    for (std::size_t r = 0; r < level.size(); ++r) {
      if (static_cast<int>(level[r]) == k) {
        rows.push_back({z1[r], z2[r]});
      }
    }
    p.resize(static_cast<Eigen::Index>(rows.size()), 2);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      p(static_cast<Eigen::Index>(r), 0) = rows[r][0];
      p(static_cast<Eigen::Index>(r), 1) = rows[r][1];
    }
    written.push_back(write_svg(plots, "samples_level_" + std::to_string(k) + ".svg",
                                svg_scatter_contour("samples at level " + std::to_string(k), p, field,
                                                    {0.05, 0.2, 0.5, 0.8})));
  }
  log << "wrote " << ex.sequence().length() << " sample panels to " << plots.string() << "\n";
}

std::vector<fs::path> plot_run(const fs::path& run, std::ostream& log) {
  std::vector<fs::path> written;
  const fs::path plots = run / "plots";
  const CsvTable diag = read_csv(run / "diagnostics.csv");
  if (diag.rows.empty() || !diag.has("ess")) {
    log << "warning: " << (run / "diagnostics.csv").string() << " has no diagnostics rows\n";
    written.push_back(write_svg(plots, "empty.svg", svg_warning("no diagnostics", "no diagnostics rows in " +
                                                                                     (run / "diagnostics.csv").string())));
    return written;
  }
  const std::vector<double> it = diag.has("iteration") ? diag.column("iteration") : iota_like(diag.rows.size());

  const auto rolling_panel = [&](const std::string& column, const std::string& title, const std::string& file) {
    const std::vector<double> values = diag.column(column);
    const Rolling r = rolling_mean_sd(values, kRollingWindow);
    Band band{it, {}, {}};
    for (std::size_t i = 0; i < r.mean.size(); ++i) {
      band.lo.push_back(r.mean[i] - 2.0 * r.sd[i]);
      band.hi.push_back(r.mean[i] + 2.0 * r.sd[i]);
    }
    written.push_back(write_svg(plots, file,
                                svg_line_plot(title, "iteration", column,
                                              {Series{"rolling mean", it, r.mean}}, {band})));
  };
  rolling_panel("ess", "training ESS, rolling mean +- 2 SD", "ess.svg");
  rolling_panel("log_Z_hat", "training log Z estimate, rolling mean +- 2 SD", "log_z.svg");

  std::vector<Series> betas;
  for (const std::string& name : diag.header) {
    if (name.rfind("beta_", 0) == 0) {
      betas.push_back(Series{name, it, diag.column(name)});
    }
  }
  if (!betas.empty()) {
    written.push_back(write_svg(plots, "schedule.svg", svg_line_plot("annealing schedule", "iteration", "beta", betas)));
  }

  if (fs::exists(run / "step_kl.csv")) {
    const CsvTable kl = read_csv(run / "step_kl.csv");
    std::vector<std::string> categories;
    for (double k : kl.column("k")) {
      categories.push_back("k=" + std::to_string(static_cast<int>(k)));
    }
    const std::vector<double> learned = kl.column("kl");
    const std::vector<double> linear = kl.column("kl_linear");
    std::ostringstream title;
    title << "per-step KL by quadrature (CV " << coefficient_of_variation(learned) << " vs linear "
          << coefficient_of_variation(linear) << ")";
    written.push_back(write_svg(plots, "step_kl.svg",
                                svg_bar_chart(title.str(), "KL", categories,
                                              {Series{"trained schedule", {}, learned}, Series{"linear", {}, linear}})));
  }
  plot_scatter(run, plots, written, log);
  return written;
}

}  // namespace

bool CsvTable::has(const std::string& column) const {
  return std::find(header.begin(), header.end(), column) != header.end();
}

std::vector<double> CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) {
    throw std::runtime_error("no column " + name);
  }
  const std::size_t j = static_cast<std::size_t>(it - header.begin());
  std::vector<double> out;
  out.reserve(rows.size());
  for (const std::vector<double>& r : rows) {
    out.push_back(j < r.size() ? r[j] : std::numeric_limits<double>::quiet_NaN());
  }
  return out;
}

CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot read " + path.string());
  }
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) {
    return t;
  }
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      t.header.push_back(cell);
    }
  }
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) {
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      row.push_back(end != cell.c_str() && *end == '\0' ? v : std::numeric_limits<double>::quiet_NaN());
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

fs::path restart_dir(const ExperimentConfig& config, int restart) {
  return fs::path(config.out) / ("restart_" + std::to_string(restart));
}

void train(const ExperimentConfig& config, std::ostream& log) {
  validate(config);
  fs::create_directories(config.out);
  write_text(fs::path(config.out) / "config.txt", to_text(config));
  std::vector<RestartOutcome> outcomes;
  for (int r = 0; r < config.restarts; ++r) {
    outcomes.push_back(config.experiment == "anneal" ? train_anneal(config, r, log) : train_hmm(config, r, log));
  }
  write_summary(config, outcomes, "report.json");
}

void evaluate(const ExperimentConfig& config, std::ostream& log) {
  validate(config);
  for (int r = 0; r < config.restarts; ++r) {
    if (!fs::exists(checkpoint_path(config, r))) {
      throw MissingCheckpointError("missing checkpoint: " + checkpoint_path(config, r).string());
    }
  }
  std::vector<RestartOutcome> outcomes;
  for (int r = 0; r < config.restarts; ++r) {
    outcomes.push_back(config.experiment == "anneal" ? eval_anneal(config, r) : eval_hmm(config, r));
    log << "restart " << r << " mean log_Z_hat " << mean_of(outcomes.back().metrics.log_Z) << " mean ess "
        << mean_of(outcomes.back().metrics.ess) << "\n";
  }
  write_summary(config, outcomes, "eval_report.json");
}

std::vector<fs::path> plot(const fs::path& run_dir, std::ostream& log) {
  std::vector<fs::path> runs;
  if (fs::exists(run_dir / "diagnostics.csv")) {
    runs.push_back(run_dir);
  } else if (fs::is_directory(run_dir)) {
    for (const auto& entry : fs::directory_iterator(run_dir)) {
      if (entry.is_directory() && entry.path().filename().string().rfind("restart_", 0) == 0 &&
          fs::exists(entry.path() / "diagnostics.csv")) {
        runs.push_back(entry.path());
      }
    }
    std::sort(runs.begin(), runs.end());
  }
  if (runs.empty()) {
    log << "warning: no diagnostics found under " << run_dir.string() << "\n";
    return {write_svg(run_dir / "plots", "empty.svg",
                      svg_warning("no diagnostics", "no diagnostics found under " + run_dir.string()))};
  }
  std::vector<fs::path> written;
  for (const fs::path& run : runs) {
    const std::vector<fs::path> files = plot_run(run, log);
    written.insert(written.end(), files.begin(), files.end());
  }
  return written;
}

int cmd_train(const ExperimentConfig& config, std::ostream& log, std::ostream& err) {
  try {
    train(config, log);
    return exit_ok;
  } catch (const ConfigError& e) {
    err << "invalid config: " << e.what() << "\n";
    return exit_invalid_config;
  } catch (const NanLossError& e) {
    err << "error: " << e.what() << "\n";
    return exit_nan_loss;
  } catch (const std::invalid_argument& e) {
    err << "invalid config: " << e.what() << "\n";
    return exit_invalid_config;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_io_error;
  }
}

int cmd_eval(const ExperimentConfig& config, std::ostream& log, std::ostream& err) {
  try {
    evaluate(config, log);
    return exit_ok;
  } catch (const ConfigError& e) {
    err << "invalid config: " << e.what() << "\n";
    return exit_invalid_config;
  } catch (const MissingCheckpointError& e) {
    err << "error: " << e.what() << "\n";
    return exit_missing_checkpoint;
  } catch (const std::invalid_argument& e) {
    err << "invalid config: " << e.what() << "\n";
    return exit_invalid_config;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_io_error;
  }
}

int cmd_plot(const fs::path& run_dir, std::ostream& log, std::ostream& err) {
  try {
    for (const fs::path& p : plot(run_dir, log)) {
      log << "wrote " << p.string() << "\n";
    }
    return exit_ok;
  } catch (const ConfigError& e) {
    err << "invalid config: " << e.what() << "\n";
    return exit_invalid_config;
  } catch (const MissingCheckpointError& e) {
    err << "error: " << e.what() << "\n";
    return exit_missing_checkpoint;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_io_error;
  }
}

}  // namespace nvi::cli
