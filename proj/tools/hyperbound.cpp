// Command-line entry point: train, sweep, bounds, check-grad, verify-bounds,
// gen-synth.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "hyperbound/bounds.hpp"
#include "hyperbound/errors.hpp"
#include "hyperbound/harness.hpp"
#include "hyperbound/verify.hpp"
#include "json.hpp"

using namespace hyperbound;

namespace {

// Flags shared by train and sweep; unset flags leave the config untouched.
struct RunFlags {
  std::string config_path;
  std::optional<std::string> data_dir;
  std::optional<std::string> arch;
  std::optional<std::string> activation;
  std::optional<std::string> method;
  std::optional<double> dropout_rate;
  std::optional<std::string> reduction;
  std::optional<int> fraction;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr;
  std::optional<double> weight_decay;
  std::optional<int> epochs;
  std::optional<std::size_t> batch;
  std::optional<double> sv_tol;
  std::optional<double> eta;
  std::vector<std::size_t> widths;

  void attach(CLI::App* app, bool single_run) {
    app->add_option("--config", config_path, "JSON run config; flags override its values");
    app->add_option("--data", data_dir, "MNIST directory (default: $HYPERBOUND_DATA)");
    app->add_option("--arch", arch, "lenet | mlp");
    app->add_option("--activation", activation, "relu | tanh");
    app->add_option("--penalty-reduction", reduction, "mean | sum over the batch for the beta |z|^2 term");
    app->add_option("--dropout-rate", dropout_rate, "rate used when a method enables dropout");
    app->add_option("--lr", lr, "AdamW learning rate");
    app->add_option("--weight-decay", weight_decay, "AdamW decoupled weight decay");
    app->add_option("--epochs", epochs, "training epochs");
    app->add_option("--batch", batch, "batch size");
    app->add_option("--sv-tol", sv_tol, "support-vector tolerance");
    app->add_option("--eta", eta, "bound confidence parameter");
    app->add_option("--mlp-widths", widths, "hidden widths for --arch mlp")->delimiter(',');
    if (single_run) {
      app->add_option("--method", method, "row label, e.g. mh+aug+lm-0.001+do");
      app->add_option("--fraction", fraction, "training fraction in percent");
      app->add_option("--seed", seed, "run seed");
    }
  }

  RunConfig resolve() const {
    RunConfig c;
    if (!config_path.empty()) {
      std::ifstream f(config_path);
      if (!f) throw DataError("cannot open config " + config_path);
      std::stringstream text;
      text << f.rdbuf();
      c = RunConfig::from_json(text.str());
    }
    if (data_dir) {
      c.data_dir = *data_dir;
    } else if (c.data_dir.empty()) {
      if (const char* env = std::getenv("HYPERBOUND_DATA")) c.data_dir = env;
    }
    if (arch) c.architecture = parse_architecture(*arch);
    if (activation) c.activation = parse_activation(*activation);
    if (method) c.method = MethodFlags::parse(*method);
    if (dropout_rate) c.dropout_rate = *dropout_rate;
    if (reduction) c.penalty_reduction = *reduction;
    if (fraction) c.fraction = *fraction;
    if (seed) c.seed = *seed;
    if (lr) c.optimizer.lr = *lr;
    if (weight_decay) c.optimizer.weight_decay = *weight_decay;
    if (epochs) c.epochs = *epochs;
    if (batch) c.batch_size = *batch;
    if (sv_tol) c.sv_tolerance = *sv_tol;
    if (eta) c.eta = *eta;
    if (!widths.empty()) c.mlp_widths = widths;
    if (c.data_dir.empty()) throw UsageError("no dataset directory: pass --data or set HYPERBOUND_DATA");
    c.validate();
    return c;
  }
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path);
  f << text;
}

int cmd_train(const RunFlags& flags, const std::string& checkpoint, const std::string& json_out) {
  const RunConfig config = flags.resolve();
  const MnistData data = load_mnist(config.data_dir);
  const RunResult r = train(config, data);

  nlohmann::json out;
  out["config"] = nlohmann::json::parse(config.to_json());
  out["test_accuracy"] = r.test_accuracy;
  out["train_accuracy"] = r.train_accuracy;
  out["test_reject_rate"] = r.test_reject_rate;
  out["train_size"] = r.train_size;
  out["epochs"] = r.epochs;
  out["seconds"] = r.seconds;
  out["epoch_loss"] = r.epoch_loss;
  out["bounds"] = nlohmann::json::parse(r.bounds.to_json());

  std::printf("%s fraction=%d seed=%llu: test accuracy %.2f%% (train %.2f%%, %zu examples, %.1f s)\n",
              config.method.label().c_str(), config.fraction, static_cast<unsigned long long>(config.seed),
              100.0 * r.test_accuracy, 100.0 * r.train_accuracy, r.train_size, r.seconds);
  std::cout << r.bounds.to_table();
  if (!checkpoint.empty()) save_checkpoint(r.model, checkpoint, out["config"].dump());
  if (!json_out.empty()) write_text(json_out, out.dump(2) + "\n");
  return 0;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int cmd_sweep(const RunFlags& flags, const std::string& methods, double lm, const std::vector<int>& fractions,
              const std::vector<std::uint64_t>& seeds, unsigned jobs, const std::string& csv,
              const std::string& markdown, bool quiet) {
  const RunConfig base = flags.resolve();
  std::vector<MethodFlags> grid;
  if (methods == "all") {
    grid = full_method_grid(lm);
  } else {
    for (const std::string& m : split_list(methods)) grid.push_back(MethodFlags::parse(m));
  }
  const MnistData data = load_mnist(base.data_dir);
  const SweepResult result = run_sweep(base, grid, fractions, seeds, data, jobs, !quiet);
  std::cout << render_report(result, ReportFormat::markdown);
  if (!csv.empty()) write_report(result, ReportFormat::csv, csv);
  if (!markdown.empty()) write_report(result, ReportFormat::markdown, markdown);
  for (const SweepCell& cell : result.cells) {
    for (const SeedOutcome& run : cell.runs) {
      if (!run.ok) std::cerr << "failed: " << cell.method << " " << cell.fraction << "% seed " << run.seed << ": "
                             << run.error << "\n";
    }
  }
  return result.all_succeeded() ? 0 : 1;
}

int report_suites(const std::vector<SuiteResult>& suites) {
  bool ok = true;
  for (const SuiteResult& s : suites) {
    std::cout << (s.ok() ? "PASS " : "FAIL ") << s.summary() << "\n";
    ok = ok && s.ok();
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Large-margin training with hyperplane-bound regularization and margin bounds"};
  app.require_subcommand(1);

  // train
  RunFlags train_flags;
  std::string checkpoint, json_out;
  CLI::App* train_cmd = app.add_subcommand("train", "train one configuration and report its bounds");
  train_flags.attach(train_cmd, true);
  train_cmd->add_option("--checkpoint", checkpoint, "write the trained model here");
  train_cmd->add_option("--json", json_out, "write the run result as JSON here");

  // sweep
  RunFlags sweep_flags;
  std::string methods = "ce,mh+lm-0.001";
  double lm = 0.001;
  std::vector<int> fractions{1, 5, 10, 20, 40, 60, 80, 100};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  unsigned jobs = std::max(1u, std::thread::hardware_concurrency());
  std::string csv, markdown;
  bool quiet = false;
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "method x fraction x seed grid");
  sweep_flags.attach(sweep_cmd, false);
  sweep_cmd->add_option("--methods", methods, "comma-separated row labels, or 'all' for the 16-row grid");
  sweep_cmd->add_option("--lm", lm, "lm weight used by --methods all");
  sweep_cmd->add_option("--fractions", fractions, "training fractions in percent")->delimiter(',');
  sweep_cmd->add_option("--seeds", seeds, "seeds")->delimiter(',');
  sweep_cmd->add_option("--jobs", jobs, "concurrent runs");
  sweep_cmd->add_option("--csv", csv, "write CSV report");
  sweep_cmd->add_option("--markdown", markdown, "write markdown table");
  sweep_cmd->add_flag("--quiet", quiet, "no per-run progress");

  // bounds
  BoundInputs in;
  std::string bounds_checkpoint, bounds_data, split = "train";
  int bounds_fraction = 100;
  std::uint64_t bounds_seed = 0;
  double bounds_tol = 1e-2;
  bool raw_pixels = false;
  CLI::App* bounds_cmd = app.add_subcommand("bounds", "bound report from raw inputs or a checkpoint");
  bounds_cmd->add_option("--checkpoint", bounds_checkpoint, "model checkpoint (JSON)");
  bounds_cmd->add_option("--data", bounds_data, "MNIST directory for --checkpoint (default: $HYPERBOUND_DATA)");
  bounds_cmd->add_option("--split", split, "train | test");
  bounds_cmd->add_option("--fraction", bounds_fraction, "stratified fraction of the split");
  bounds_cmd->add_option("--seed", bounds_seed, "subsample seed");
  bounds_cmd->add_option("--sv-tol", bounds_tol, "support-vector tolerance");
  bounds_cmd->add_flag("--raw-pixels", raw_pixels, "skip MNIST normalization");
  bounds_cmd->add_option("--l", in.l, "sample size");
  bounds_cmd->add_option("--vc-dim", in.h, "VC dimension (replaced by the margin bound when --R and --delta are set)");
  bounds_cmd->add_option("--eta", in.eta, "confidence parameter");
  bounds_cmd->add_option("--B", in.B, "loss bound B");
  bounds_cmd->add_option("--D", in.D, "radius D");
  bounds_cmd->add_option("--rho", in.rho, "margin rho");
  bounds_cmd->add_option("--delta", in.Delta, "margin Delta for the VC bound");
  bounds_cmd->add_option("--R", in.R, "radius R for the VC bound");
  bounds_cmd->add_option("--n", in.n, "input dimension n");
  bounds_cmd->add_option("--m", in.m_errors, "margin errors m");
  bounds_cmd->add_option("--K", in.K, "essential support vectors K");
  bounds_cmd->add_option("--remp", in.remp, "empirical risk");

  // check-grad
  std::size_t huber_points = 1000, net_points = 100;
  std::uint64_t grad_seed = 0;
  CLI::App* grad_cmd = app.add_subcommand("check-grad", "finite-difference gradient suites");
  grad_cmd->add_option("--huber-points", huber_points, "random (s, y) points for the Huber check");
  grad_cmd->add_option("--points", net_points, "random parameter points per network");
  grad_cmd->add_option("--seed", grad_seed, "suite seed");

  // verify-bounds
  std::size_t instances = 100;
  std::uint64_t verify_seed = 0;
  CLI::App* verify_cmd = app.add_subcommand("verify-bounds", "Novikoff and leave-one-out property suites");
  verify_cmd->add_option("--instances", instances, "random instances per suite");
  verify_cmd->add_option("--seed", verify_seed, "suite seed");

  // gen-synth
  std::size_t synth_n = 50, synth_dim = 2;
  double synth_rho = 0.1, synth_radius = 1.0;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  CLI::App* synth_cmd = app.add_subcommand("gen-synth", "write a separable synthetic sample as JSON");
  synth_cmd->add_option("--n", synth_n, "number of points");
  synth_cmd->add_option("--dim", synth_dim, "dimension");
  synth_cmd->add_option("--rho", synth_rho, "margin rho0");
  synth_cmd->add_option("--radius", synth_radius, "radius D");
  synth_cmd->add_option("--seed", synth_seed, "seed");
  synth_cmd->add_option("--out", synth_out, "output file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) return cmd_train(train_flags, checkpoint, json_out);
    if (sweep_cmd->parsed()) {
      return cmd_sweep(sweep_flags, methods, lm, fractions, seeds, jobs, csv, markdown, quiet);
    }
    if (bounds_cmd->parsed()) {
      BoundReport report;
      if (!bounds_checkpoint.empty()) {
        if (bounds_data.empty()) {
          if (const char* env = std::getenv("HYPERBOUND_DATA")) bounds_data = env;
        }
        if (bounds_data.empty()) throw UsageError("--checkpoint needs --data or HYPERBOUND_DATA");
        if (split != "train" && split != "test") throw UsageError("--split must be train or test");
        const Model model = load_checkpoint(bounds_checkpoint);
        const MnistFiles files = locate_mnist(bounds_data);
        Dataset ds = split == "test" ? load_idx(files.test_images, files.test_labels, Split::test)
                                     : load_idx(files.train_images, files.train_labels, Split::train);
        ds = subsample_fraction(ds, bounds_fraction, bounds_seed);
        if (!raw_pixels) ds = normalize(std::move(ds), MnistConstants::mean, MnistConstants::std);
        report = bound_report(model, ds, bounds_tol, in.eta);
      } else {
        report = report_from_inputs(in);
      }
      std::cout << report.to_json() << "\n" << report.to_table();
      return 0;
    }
    if (grad_cmd->parsed()) {
      return report_suites({check_huber_gradients(huber_points, grad_seed),
                            check_network_gradients(Architecture::mlp, net_points, grad_seed),
                            check_network_gradients(Architecture::lenet, net_points, grad_seed)});
    }
    if (verify_cmd->parsed()) {
      const SuiteResult nov = novikoff_suite(instances, verify_seed);
      const LooSuiteResult loo = loo_suite(instances, verify_seed);
      return report_suites({nov, loo.bound, loo.uniqueness});
    }
    if (synth_cmd->parsed()) {
      save_vectors(synth_separable(synth_n, synth_dim, synth_rho, synth_radius, synth_seed), synth_out);
      std::cout << "wrote " << synth_n << " points to " << synth_out << "\n";
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
