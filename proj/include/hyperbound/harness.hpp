#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hyperbound/bounds.hpp"
#include "hyperbound/data.hpp"
#include "hyperbound/loss.hpp"
#include "hyperbound/model.hpp"
#include "hyperbound/optim.hpp"

namespace hyperbound {

/// One row label of the results table, e.g. "mh+aug+lm-0.001+do".
struct MethodFlags {
  BaseLoss base = BaseLoss::cross_entropy;
  std::optional<double> lm_weight;  // alpha = beta = lm_weight when set
  bool augment = false;
  bool dropout = false;

  /// Canonical order: base, aug, lm, do.
  std::string label() const;
  static MethodFlags parse(const std::string& label);
  LossConfig loss() const;

  friend bool operator==(const MethodFlags&, const MethodFlags&) = default;
};

/// The 16-row grid {ce, mh} x {aug} x {lm} x {do} at a given lm weight.
std::vector<MethodFlags> full_method_grid(double lm_weight = 0.001);

enum class Architecture { lenet, mlp };
std::string to_string(Architecture a);
Architecture parse_architecture(const std::string& name);

struct RunConfig {
  std::filesystem::path data_dir;
  Architecture architecture = Architecture::lenet;
  Activation activation = Activation::relu;
  std::vector<std::size_t> mlp_widths{256, 84};
  MethodFlags method;
  /// How the beta |z|^2 term reduces over a batch: "mean" (default, batch-size
  /// invariant) or "sum" (beta scaled by the batch size).
  std::string penalty_reduction = "mean";
  double dropout_rate = 0.5;
  int fraction = 100;
  std::uint64_t seed = 0;
  AdamWConfig optimizer;
  int epochs = 30;
  std::size_t batch_size = 64;
  double sv_tolerance = 1e-2;
  double eta = 0.05;

  void validate() const;
  std::string to_json() const;
  /// Unknown keys are rejected; missing keys keep their defaults.
  static RunConfig from_json(const std::string& text);
  static RunConfig from_json(const std::string& text, RunConfig base);
};

/// Raw MNIST splits in the [0, 1] pixel domain.
struct MnistData {
  Dataset train;
  Dataset test;
};
MnistData load_mnist(const std::filesystem::path& dir);

struct RunResult {
  Model model;
  double test_accuracy = 0.0;   // fraction in [0, 1]
  double train_accuracy = 0.0;
  double test_reject_rate = 0.0;
  std::size_t train_size = 0;
  BoundReport bounds;           // on the (un-augmented) training subset
  std::vector<double> epoch_loss;
  int epochs = 0;
  double seconds = 0.0;
};

/// Trains one configuration: stratified subsample of the training split,
/// optional augmentation before normalization, AdamW on the configured
/// objective, evaluation on the full test split. Deterministic in
/// (config, seed). Throws NumericError if the loss diverges.
RunResult train(const RunConfig& config, const MnistData& data);

/// Per-seed outcome inside a sweep cell.
struct SeedOutcome {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double accuracy = 0.0;  // percent
  double D_l = 0.0;
  double rho_min = 0.0;
  double k_hat = 0.0;
  double dl2w2 = 0.0;
  double seconds = 0.0;
};

struct SweepCell {
  std::string method;
  int fraction = 0;
  std::vector<SeedOutcome> runs;
  // Aggregates over successful seeds; accuracies in percent.
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  std::size_t seeds = 0;
  std::size_t failures = 0;
  double D_l = 0.0;
  double rho_min = 0.0;
  double k_hat = 0.0;
  double dl2w2 = 0.0;
  int epochs = 0;
  double seconds = 0.0;

  void aggregate();
};

struct SweepResult {
  std::vector<SweepCell> cells;
  std::vector<int> fractions;
  std::vector<std::string> methods;

  const SweepCell* find(const std::string& method, int fraction) const;
  bool all_succeeded() const;
};

/// One train() per (method, fraction, seed). Failed runs are recorded in
/// their cell and do not stop the sweep; throws only when every run fails.
/// Cells run on up to `jobs` threads, each run single-threaded.
SweepResult run_sweep(const RunConfig& base, const std::vector<MethodFlags>& grid, const std::vector<int>& fractions,
                      const std::vector<std::uint64_t>& seeds, const MnistData& data, unsigned jobs = 1,
                      bool verbose = false);

enum class ReportFormat { csv, markdown };

/// CSV: method,fraction,mean,std,seeds,D_l,rho_min,K_hat,dl2w2,epochs,seconds,failures.
/// Markdown: methods as rows, fractions as columns, "mean±std" cells.
void write_report(const SweepResult& result, ReportFormat format, const std::filesystem::path& path);
std::string render_report(const SweepResult& result, ReportFormat format);
/// Parses the CSV form back into cells (aggregates only).
SweepResult read_report_csv(const std::filesystem::path& path);

}  // namespace hyperbound
