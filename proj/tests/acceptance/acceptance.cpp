// Acceptance gate: one PASS/FAIL line per criterion.
//
//   acceptance [--criteria 1,2,...] [--data DIR] [--report-dir DIR] [--no-full]
//
// Criteria 1-4 are self-contained. Criteria 5-8 train LeNet on MNIST, found
// via --data, $HYPERBOUND_DATA or the build-time default. The MNIST protocol
// (epochs per fraction, penalty reduction) is fixed below and printed with
// the results.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "formula_table.hpp"
#include "hyperbound/bounds.hpp"
#include "hyperbound/errors.hpp"
#include "hyperbound/harness.hpp"
#include "hyperbound/verify.hpp"

using namespace hyperbound;

namespace {

enum class Verdict { pass, fail, skipped };

int failures = 0;

void report(int id, const std::string& title, Verdict v, const std::string& detail) {
  const char* tag = v == Verdict::pass ? "PASS" : (v == Verdict::fail ? "FAIL" : "SKIPPED");
  if (v == Verdict::fail) ++failures;
  std::printf("%-7s criterion %d (%s): %s\n", tag, id, title.c_str(), detail.c_str());
  std::fflush(stdout);
}

Verdict verdict(bool ok) { return ok ? Verdict::pass : Verdict::fail; }

std::string fmt(const char* pattern, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// ---------------------------------------------------------------------------

void criterion_gradients() {
  const auto start = std::chrono::steady_clock::now();
  const SuiteResult huber = check_huber_gradients(1000, 0, 1e-6);
  const SuiteResult mlp = check_network_gradients(Architecture::mlp, 100, 0);
  const SuiteResult lenet = check_network_gradients(Architecture::lenet, 100, 0);
  const double elapsed = seconds_since(start);
  const bool ok = huber.ok() && mlp.ok() && lenet.ok() && huber.max_error < 1e-6 && mlp.max_error < 1e-4 &&
                  lenet.max_error < 1e-4 && elapsed < 120.0;
  report(1, "gradient oracle", verdict(ok),
         huber.summary() + "; " + mlp.summary() + "; " + lenet.summary() + "; total " + fmt("%.1f s", elapsed) +
             " (limit 120 s)");
}

void criterion_formulas() {
  const auto table = formula_table::evaluate(1e-12);
  // remp = 0 -> B eps and m = 0 -> xi, over random arguments
  RngStream rng(2024);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const double B = rng.uniform(0.1, 5.0), eps = rng.uniform(1e-4, 5.0);
    worst = std::max(worst, std::abs(risk_bound(0.0, B, eps) - B * eps) / (B * eps));
    const double l = static_cast<double>(1 + rng.below(100000)), h = static_cast<double>(1 + rng.below(100));
    const double eta = rng.uniform(1e-3, 0.9);
    const double xi = epsilon_l(l, h, eta);
    worst = std::max(worst, std::abs(p_error_bound(0.0, l, h, eta) - xi) / xi);
  }
  const bool ok = table.rows == 20 && table.passed == table.rows && worst < 1e-12;
  std::string detail = std::to_string(table.passed) + "/" + std::to_string(table.rows) +
                       " table rows, max rel err " + fmt("%.2e", table.max_rel_error) +
                       "; collapses max rel err " + fmt("%.2e", worst);
  for (const auto& f : table.failures) detail += "; mismatch " + f;
  report(2, "formula spot-checks", verdict(ok), detail);
}

void criterion_novikoff() {
  const SuiteResult r = novikoff_suite(100, 0);
  report(3, "Novikoff property suite", verdict(r.ok() && r.trials == 100 && r.seconds < 60.0),
         r.summary() + " (limit 60 s)");
}

void criterion_loo() {
  const LooSuiteResult r = loo_suite(100, 0);
  const double elapsed = r.bound.seconds + r.uniqueness.seconds;
  const bool ok = r.bound.ok() && r.uniqueness.ok() && r.bound.trials == 100 && r.uniqueness.trials == 100 &&
                  elapsed < 120.0;
  report(4, "LOO/SV property suite", verdict(ok),
         r.bound.summary() + "; " + r.uniqueness.summary() + " (limit 120 s)");
}

// ---------------------------------------------------------------------------
// MNIST protocol

struct Protocol {
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  // Roughly comparable numbers of optimizer steps: 599 examples x 300 epochs
  // vs 12000 x 30 at batch 64.
  int epochs_small = 300;
  int epochs_large = 30;
  int epochs_full = 30;
  std::string reduction = "sum";
  unsigned jobs = 1;
};

class MnistRuns {
 public:
  MnistRuns(MnistData data, Protocol p, std::optional<std::filesystem::path> report_dir)
      : data_(std::move(data)), protocol_(std::move(p)), report_dir_(std::move(report_dir)) {}

  const Protocol& protocol() const { return protocol_; }

  // Runs (method, fraction) for every seed once; later calls reuse the cell.
  const SweepCell& cell(const std::string& method, int fraction) {
    const auto key = std::make_pair(method, fraction);
    if (auto it = cells_.find(key); it != cells_.end()) return it->second;
    RunConfig base;
    base.architecture = Architecture::lenet;
    base.penalty_reduction = protocol_.reduction;
    base.epochs = fraction == 1 ? protocol_.epochs_small : (fraction == 100 ? protocol_.epochs_full : protocol_.epochs_large);
    std::vector<std::uint64_t> seeds = protocol_.seeds;
    if (fraction == 100) seeds = {0};
    const auto start = std::chrono::steady_clock::now();
    SweepResult r;
    try {
      r = run_sweep(base, {MethodFlags::parse(method)}, {fraction}, seeds, data_, protocol_.jobs, true);
    } catch (const NumericError& e) {
      SweepCell failed;
      failed.method = method;
      failed.fraction = fraction;
      failed.failures = seeds.size();
      r.cells = {failed};
      std::cerr << e.what() << '\n';
    }
    r.cells.front().seconds = seconds_since(start);  // wall clock, not summed per run
    const SweepCell& c = cells_.emplace(key, r.cells.front()).first->second;
    all_.cells.push_back(c);
    save();
    return c;
  }

 private:
  void save() {
    if (!report_dir_) return;
    std::filesystem::create_directories(*report_dir_);
    write_report(all_, ReportFormat::csv, *report_dir_ / "acceptance_sweep.csv");
    write_report(all_, ReportFormat::markdown, *report_dir_ / "acceptance_sweep.md");
  }

  MnistData data_;
  Protocol protocol_;
  std::optional<std::filesystem::path> report_dir_;
  std::map<std::pair<std::string, int>, SweepCell> cells_;
  SweepResult all_;
};

std::string cell_text(const SweepCell& c) {
  std::string s = c.method + "@" + std::to_string(c.fraction) + "% " + fmt("%.2f", c.mean) + "±" + fmt("%.2f", c.std);
  if (c.failures) s += " (" + std::to_string(c.failures) + " failed)";
  return s;
}

bool complete(const SweepCell& c) { return c.failures == 0 && c.seeds > 0; }

void criterion_table_trend(MnistRuns& runs) {
  const SweepCell& ce = runs.cell("ce", 1);
  const SweepCell& ce_lm = runs.cell("ce+lm-0.001", 1);
  const SweepCell& mh = runs.cell("mh", 1);
  const SweepCell& mh_lm = runs.cell("mh+lm-0.001", 1);
  const double minutes = (ce.seconds + ce_lm.seconds + mh.seconds + mh_lm.seconds) / 60.0;
  const bool a = mh_lm.mean >= 92.0 && mh_lm.mean - ce.mean >= 1.0;
  const bool b = ce_lm.mean - ce.mean >= 1.0;
  const bool ok = complete(ce) && complete(ce_lm) && complete(mh) && complete(mh_lm) && a && b && minutes < 30.0;
  report(5, "1% MNIST trend", verdict(ok),
         cell_text(ce) + ", " + cell_text(ce_lm) + ", " + cell_text(mh) + ", " + cell_text(mh_lm) +
             "; (a) mh+lm >= 92 and ce + 1: " + (a ? "yes" : "no") + "; (b) ce+lm >= ce + 1: " + (b ? "yes" : "no") +
             "; " + fmt("%.1f min", minutes) + " (target 30 min)");
}

void criterion_gap(MnistRuns& runs) {
  const SweepCell& mh1 = runs.cell("mh", 1);
  const SweepCell& lm1 = runs.cell("mh+lm-0.001", 1);
  const SweepCell& mh20 = runs.cell("mh", 20);
  const SweepCell& lm20 = runs.cell("mh+lm-0.001", 20);
  const double gap1 = lm1.mean - mh1.mean, gap20 = lm20.mean - mh20.mean;
  const bool ok = complete(mh1) && complete(lm1) && complete(mh20) && complete(lm20) && gap1 > gap20;
  report(6, "diminishing gap", verdict(ok),
         "gap at 1% " + fmt("%.2f", gap1) + " (" + cell_text(lm1) + " vs " + cell_text(mh1) + "), gap at 20% " +
             fmt("%.2f", gap20) + " (" + cell_text(lm20) + " vs " + cell_text(mh20) + ")");
}

std::vector<double> squared_radii(const SweepCell& c) {
  std::vector<double> out;
  for (const SeedOutcome& r : c.runs) {
    if (r.ok) out.push_back(r.D_l * r.D_l);
  }
  return out;
}

double spread(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

void criterion_radius(MnistRuns& runs) {
  // Every lm-active configuration the protocol trains, paired with its lm-off twin.
  const std::vector<std::pair<std::string, int>> pairs{{"ce", 1}, {"mh", 1}, {"mh", 20}};
  bool in_band = true, stabler = true, all_ok = true;
  std::string detail;
  for (const auto& [base, fraction] : pairs) {
    const SweepCell& off = runs.cell(base, fraction);
    const SweepCell& on = runs.cell(base + "+lm-0.001", fraction);
    all_ok = all_ok && complete(off) && complete(on);
    const auto d_on = squared_radii(on), d_off = squared_radii(off);
    double lo = 1e300, hi = 0.0;
    for (double d : d_on) {
      lo = std::min(lo, d);
      hi = std::max(hi, d);
    }
    const bool band = !d_on.empty() && lo >= 0.5 && hi <= 2.0;
    const bool stable = spread(d_on) < spread(d_off);
    in_band = in_band && band;
    stabler = stabler && stable;
    if (!detail.empty()) detail += "; ";
    detail += on.method + "@" + std::to_string(fraction) + "% D_l^2 in [" + fmt("%.3f", lo) + ", " + fmt("%.3f", hi) +
              "]" + (band ? "" : " (outside [0.5, 2])") + ", spread " + fmt("%.3f", spread(d_on)) + " vs " +
              fmt("%.3f", spread(d_off)) + " lm off";
  }
  report(7, "radius stability", verdict(all_ok && in_band && stabler), detail);
}

void criterion_full(MnistRuns& runs) {
  const SweepCell& ce = runs.cell("ce", 100);
  report(8, "full-data sanity", verdict(complete(ce) && ce.mean >= 98.5),
         "ce@100% seed 0: " + fmt("%.2f%%", ce.mean) + " after " + std::to_string(runs.protocol().epochs_full) +
             " epochs (threshold 98.5%)");
}

std::optional<MnistData> find_mnist(const std::string& flag) {
  std::vector<std::filesystem::path> candidates;
  if (!flag.empty()) candidates.emplace_back(flag);
  if (const char* env = std::getenv("HYPERBOUND_DATA")) candidates.emplace_back(env);
  candidates.emplace_back(HYPERBOUND_MNIST_DIR);
  for (const auto& dir : candidates) {
    try {
      return load_mnist(dir);
    } catch (const DataError&) {
    }
  }
  return std::nullopt;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance gate"};
  std::vector<int> criteria{1, 2, 3, 4, 5, 6, 7, 8};
  std::string data_dir, report_dir;
  bool no_full = false;
  Protocol protocol;
  app.add_option("--criteria", criteria, "criteria to evaluate")->delimiter(',');
  app.add_option("--data", data_dir, "MNIST directory");
  app.add_option("--report-dir", report_dir, "write the MNIST sweep as CSV and markdown here");
  app.add_flag("--no-full", no_full, "skip criterion 8 (100% MNIST run)");
  app.add_option("--jobs", protocol.jobs, "concurrent training runs");
  CLI11_PARSE(app, argc, argv);

  const std::set<int> wanted(criteria.begin(), criteria.end());
  if (wanted.count(1)) criterion_gradients();
  if (wanted.count(2)) criterion_formulas();
  if (wanted.count(3)) criterion_novikoff();
  if (wanted.count(4)) criterion_loo();

  const bool needs_mnist = wanted.count(5) || wanted.count(6) || wanted.count(7) || wanted.count(8);
  if (needs_mnist) {
    std::optional<MnistData> data = find_mnist(data_dir);
    if (!data) {
      for (int id : {5, 6, 7, 8}) {
        if (wanted.count(id)) report(id, "MNIST", Verdict::fail, "MNIST not found (set --data or HYPERBOUND_DATA)");
      }
    } else {
      std::printf("MNIST protocol: LeNet relu, AdamW lr 1e-3 wd 0.1, batch 64, beta |z|^2 summed over the batch, "
                  "%d epochs at 1%%, %d at 20%%, %d at 100%%, seeds 0-4\n",
                  protocol.epochs_small, protocol.epochs_large, protocol.epochs_full);
      std::fflush(stdout);
      std::optional<std::filesystem::path> dir;
      if (!report_dir.empty()) dir = report_dir;
      MnistRuns runs(std::move(*data), protocol, dir);
      try {
        if (wanted.count(5)) criterion_table_trend(runs);
        if (wanted.count(6)) criterion_gap(runs);
        if (wanted.count(7)) criterion_radius(runs);
        if (wanted.count(8)) {
          if (no_full) {
            report(8, "full-data sanity", Verdict::skipped, "--no-full given");
          } else {
            criterion_full(runs);
          }
        }
      } catch (const std::exception& e) {
        report(0, "MNIST", Verdict::fail, e.what());
      }
    }
  }
  std::printf("%s: %d failing criteria\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
