#include "hyperbound/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "hyperbound/errors.hpp"
#include "json.hpp"

namespace hyperbound {

namespace {

// Stream keys for RngStream::derive; fixed so runs are reproducible.
enum StreamKey : std::uint64_t { kInit = 1, kShuffle = 2, kAugment = 3, kDropout = 4 };

std::string format_double(double v, const char* fmt = "%.17g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

double parse_number(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("cannot parse " + what + " from '" + s + "'");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// MethodFlags

std::string MethodFlags::label() const {
  std::string s = base == BaseLoss::modified_huber ? "mh" : "ce";
  if (augment) s += "+aug";
  if (lm_weight) s += "+lm-" + format_double(*lm_weight, "%g");
  if (dropout) s += "+do";
  return s;
}

MethodFlags MethodFlags::parse(const std::string& label) {
  const auto parts = split(label, '+');
  if (parts.empty() || parts.front().empty()) throw UsageError("empty method label");
  MethodFlags m;
  m.base = parse_base_loss(parts.front());
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const std::string& p = parts[i];
    if (p == "aug" && !m.augment) {
      m.augment = true;
    } else if (p == "do" && !m.dropout) {
      m.dropout = true;
    } else if (p.rfind("lm-", 0) == 0 && !m.lm_weight) {
      double w = 0.0;
      try {
        w = parse_number(p.substr(3), "lm weight");
      } catch (const DataError& e) {
        throw UsageError(e.what());
      }
      if (!(w >= 0.0) || !std::isfinite(w)) throw UsageError("lm weight must be finite and >= 0");
      m.lm_weight = w;
    } else {
      throw UsageError("bad method label component '" + p + "' in '" + label + "'");
    }
  }
  return m;
}

LossConfig MethodFlags::loss() const {
  LossConfig c;
  c.base = base;
  c.alpha = lm_weight.value_or(0.0);
  c.beta = lm_weight.value_or(0.0);
  return c;
}

std::vector<MethodFlags> full_method_grid(double lm_weight) {
  std::vector<MethodFlags> grid;
  for (BaseLoss base : {BaseLoss::cross_entropy, BaseLoss::modified_huber}) {
    for (bool aug : {false, true}) {
      for (bool lm : {false, true}) {
        for (bool drop : {false, true}) {
          MethodFlags m;
          m.base = base;
          m.augment = aug;
          if (lm) m.lm_weight = lm_weight;
          m.dropout = drop;
          grid.push_back(m);
        }
      }
    }
  }
  return grid;
}

std::string to_string(Architecture a) { return a == Architecture::lenet ? "lenet" : "mlp"; }

Architecture parse_architecture(const std::string& name) {
  if (name == "lenet") return Architecture::lenet;
  if (name == "mlp") return Architecture::mlp;
  throw UsageError("unknown architecture '" + name + "' (expected lenet or mlp)");
}

// ---------------------------------------------------------------------------
// RunConfig

void RunConfig::validate() const {
  if (fraction < 1 || fraction > 100) throw UsageError("fraction must be in [1, 100]");
  if (epochs < 0) throw UsageError("epochs must be >= 0");
  if (batch_size == 0) throw UsageError("batch size must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw UsageError("dropout rate must be in [0, 1)");
  if (!(sv_tolerance >= 0.0)) throw UsageError("sv tolerance must be >= 0");
  if (!(eta > 0.0 && eta < 1.0)) throw UsageError("eta must be in (0, 1)");
  if (penalty_reduction != "mean" && penalty_reduction != "sum") {
    throw UsageError("penalty reduction must be mean or sum");
  }
  if (architecture == Architecture::mlp && mlp_widths.empty()) throw UsageError("mlp needs at least one width");
  for (std::size_t w : mlp_widths) {
    if (w == 0) throw UsageError("mlp widths must be positive");
  }
  optimizer.validate();
  method.loss().validate();
}

std::string RunConfig::to_json() const {
  nlohmann::json j;
  j["data_dir"] = data_dir.string();
  j["architecture"] = to_string(architecture);
  j["activation"] = to_string(activation);
  j["mlp_widths"] = mlp_widths;
  j["method"] = method.label();
  j["penalty_reduction"] = penalty_reduction;
  j["dropout_rate"] = dropout_rate;
  j["fraction"] = fraction;
  j["seed"] = seed;
  j["optimizer"] = {{"lr", optimizer.lr},
                    {"beta1", optimizer.beta1},
                    {"beta2", optimizer.beta2},
                    {"eps", optimizer.eps},
                    {"weight_decay", optimizer.weight_decay}};
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["sv_tolerance"] = sv_tolerance;
  j["eta"] = eta;
  return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) { return from_json(text, RunConfig{}); }

RunConfig RunConfig::from_json(const std::string& text, RunConfig c) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("run config: ") + e.what());
  }
  if (!j.is_object()) throw DataError("run config must be a JSON object");
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& key = it.key();
      const auto& v = it.value();
      if (key == "data_dir") {
        c.data_dir = v.get<std::string>();
      } else if (key == "architecture") {
        c.architecture = parse_architecture(v.get<std::string>());
      } else if (key == "activation") {
        c.activation = parse_activation(v.get<std::string>());
      } else if (key == "mlp_widths") {
        c.mlp_widths = v.get<std::vector<std::size_t>>();
      } else if (key == "method") {
        c.method = MethodFlags::parse(v.get<std::string>());
      } else if (key == "base_loss") {
        c.method.base = parse_base_loss(v.get<std::string>());
      } else if (key == "lm_weight") {
        if (v.is_null() || (v.is_string() && v.get<std::string>() == "off")) {
          c.method.lm_weight.reset();
        } else {
          c.method.lm_weight = v.get<double>();
        }
      } else if (key == "augment") {
        c.method.augment = v.get<bool>();
      } else if (key == "dropout") {
        c.method.dropout = v.get<bool>();
      } else if (key == "penalty_reduction") {
        c.penalty_reduction = v.get<std::string>();
      } else if (key == "dropout_rate") {
        c.dropout_rate = v.get<double>();
      } else if (key == "fraction") {
        c.fraction = v.get<int>();
      } else if (key == "seed") {
        c.seed = v.get<std::uint64_t>();
      } else if (key == "optimizer") {
        for (auto o = v.begin(); o != v.end(); ++o) {
          const double x = o.value().get<double>();
          if (o.key() == "lr") c.optimizer.lr = x;
          else if (o.key() == "beta1") c.optimizer.beta1 = x;
          else if (o.key() == "beta2") c.optimizer.beta2 = x;
          else if (o.key() == "eps") c.optimizer.eps = x;
          else if (o.key() == "weight_decay") c.optimizer.weight_decay = x;
          else throw DataError("run config: unknown optimizer key '" + o.key() + "'");
        }
      } else if (key == "epochs") {
        c.epochs = v.get<int>();
      } else if (key == "batch_size") {
        c.batch_size = v.get<std::size_t>();
      } else if (key == "sv_tolerance") {
        c.sv_tolerance = v.get<double>();
      } else if (key == "eta") {
        c.eta = v.get<double>();
      } else {
        throw DataError("run config: unknown key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("run config: ") + e.what());
  }
  c.validate();
  return c;
}

MnistData load_mnist(const std::filesystem::path& dir) {
  const MnistFiles f = locate_mnist(dir);
  MnistData d;
  d.train = load_idx(f.train_images, f.train_labels, Split::train);
  d.test = load_idx(f.test_images, f.test_labels, Split::test);
  return d;
}

// ---------------------------------------------------------------------------
// Training

namespace {

Model build_model(const RunConfig& config, const Shape& image_shape, std::size_t n_classes, RngStream& rng) {
  const double rate = config.method.dropout ? config.dropout_rate : 0.0;
  if (config.architecture == Architecture::lenet) {
    LenetOptions o;
    o.activation = config.activation;
    o.dropout = rate;
    o.n_classes = n_classes;
    o.input_shape = image_shape;
    return make_lenet(o, rng);
  }
  MlpOptions o;
  o.input_shape = image_shape;
  o.widths = config.mlp_widths;
  o.activation = config.activation;
  o.dropout = rate;
  o.n_classes = n_classes;
  return make_mlp(o, rng);
}

double accuracy_of(const Tensor& scores, std::span<const int> labels, double* reject_rate) {
  const std::size_t n = scores.dim(0);
  const std::size_t c = scores.dim(1);
  std::size_t correct = 0;
  std::size_t rejects = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Prediction p = predict(scores.values().subspan(i * c, c));
    if (static_cast<int>(p.label) == labels[i]) ++correct;
    if (p.reject) ++rejects;
  }
  if (reject_rate) *reject_rate = static_cast<double>(rejects) / static_cast<double>(n);
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace

RunResult train(const RunConfig& config, const MnistData& data) {
  config.validate();
  data.train.validate();
  data.test.validate();
  const auto start = std::chrono::steady_clock::now();

  const Dataset raw = subsample_fraction(data.train, config.fraction, config.seed);
  const Dataset train_set = normalize(raw, MnistConstants::mean, MnistConstants::std);
  const std::size_t n = train_set.size();
  const std::size_t c = train_set.channels();
  const std::size_t h = train_set.images.dim(2);
  const std::size_t w = train_set.images.dim(3);
  const std::size_t image_size = train_set.image_size();
  const double mean = MnistConstants::mean;
  const double stdev = MnistConstants::std;

  RngStream init = RngStream::derive(config.seed, {kInit});
  RunResult result;
  result.model = build_model(config, train_set.image_shape(), train_set.n_classes, init);
  Model& model = result.model;
  const LossConfig loss_config = config.method.loss();
  OptimState state(config.optimizer);

  std::vector<std::size_t> order(n);
  std::vector<double> scratch(image_size);
  std::vector<int> batch_labels;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto ep = static_cast<std::uint64_t>(epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    RngStream::derive(config.seed, {kShuffle, ep}).shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < n; begin += config.batch_size) {
      const std::size_t end = std::min(n, begin + config.batch_size);
      const std::size_t b = end - begin;
      Tensor batch({b, c, h, w});
      batch_labels.resize(b);
      for (std::size_t k = 0; k < b; ++k) {
        const std::size_t idx = order[begin + k];
        batch_labels[k] = train_set.labels[idx];
        std::span<double> dst = batch.values().subspan(k * image_size, image_size);
        if (config.method.augment) {
          // Augmentation works in the raw pixel domain, then normalizes.
          RngStream aug = RngStream::derive(config.seed, {kAugment, ep, idx});
          const AffineParams p = sample_affine_params(h, w, aug);
          apply_affine(raw.image(idx), c, h, w, p, scratch);
          for (std::size_t i = 0; i < image_size; ++i) dst[i] = (scratch[i] - mean) / stdev;
        } else {
          const auto src = train_set.image(idx);
          std::copy(src.begin(), src.end(), dst.begin());
        }
      }

      Tape tape;
      const ModelVars vars = bind_parameters(tape, model);
      const Var input = tape.constant(std::move(batch));
      RngStream drop = RngStream::derive(config.seed, {kDropout, ep, static_cast<std::uint64_t>(batches)});
      const ForwardPass pass = forward(tape, model, vars, input, Mode::train, drop);
      LossConfig batch_loss = loss_config;
      if (config.penalty_reduction == "sum") batch_loss.beta *= static_cast<double>(b);
      const Var loss = objective(tape, batch_loss, pass, vars.head_weight, batch_labels);
      const double value = tape.value(loss)[0];
      if (!std::isfinite(value)) {
        throw NumericError("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batches));
      }
      tape.backward(loss);

      std::vector<ParameterSlot> slots = model.parameters();
      std::vector<ParamView> views;
      views.reserve(slots.size());
      for (std::size_t k = 0; k < slots.size(); ++k) {
        views.push_back({slots[k].tensor->values(), tape.grad(vars.flat[k]), slots[k].decay});
      }
      adamw_step(views, state);
      loss_sum += value;
      ++batches;
    }
    result.epoch_loss.push_back(batches ? loss_sum / static_cast<double>(batches) : 0.0);
  }
  result.epochs = config.epochs;

  const Dataset test_set = normalize(data.test, MnistConstants::mean, MnistConstants::std);
  const Evaluation test_eval = evaluate(model, test_set.images);
  result.test_accuracy = accuracy_of(test_eval.scores, test_set.labels, &result.test_reject_rate);

  const Evaluation train_eval = evaluate(model, train_set.images);
  result.train_accuracy = accuracy_of(train_eval.scores, train_set.labels, nullptr);
  result.bounds = bound_report(model.head, train_eval.features, train_eval.scores, train_set.labels,
                               config.sv_tolerance, config.eta);
  result.train_size = n;
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

// ---------------------------------------------------------------------------
// Sweep

void SweepCell::aggregate() {
  std::vector<const SeedOutcome*> ok;
  for (const SeedOutcome& r : runs) {
    if (r.ok) ok.push_back(&r);
  }
  seeds = ok.size();
  failures = runs.size() - ok.size();
  seconds = 0.0;
  for (const SeedOutcome& r : runs) seconds += r.seconds;
  mean = std = D_l = rho_min = k_hat = dl2w2 = 0.0;
  if (ok.empty()) return;
  const double k = static_cast<double>(ok.size());
  for (const SeedOutcome* r : ok) {
    mean += r->accuracy;
    D_l += r->D_l;
    rho_min += r->rho_min;
    k_hat += r->k_hat;
    dl2w2 += r->dl2w2;
  }
  mean /= k;
  D_l /= k;
  rho_min /= k;
  k_hat /= k;
  dl2w2 /= k;
  double ss = 0.0;
  for (const SeedOutcome* r : ok) ss += (r->accuracy - mean) * (r->accuracy - mean);
  std = std::sqrt(ss / k);
}

const SweepCell* SweepResult::find(const std::string& method, int fraction) const {
  for (const SweepCell& c : cells) {
    if (c.method == method && c.fraction == fraction) return &c;
  }
  return nullptr;
}

bool SweepResult::all_succeeded() const {
  if (cells.empty()) return false;
  return std::all_of(cells.begin(), cells.end(), [](const SweepCell& c) { return c.failures == 0 && c.seeds > 0; });
}

SweepResult run_sweep(const RunConfig& base, const std::vector<MethodFlags>& grid, const std::vector<int>& fractions,
                      const std::vector<std::uint64_t>& seeds, const MnistData& data, unsigned jobs, bool verbose) {
  if (grid.empty() || fractions.empty() || seeds.empty()) throw UsageError("sweep needs methods, fractions and seeds");
  SweepResult result;
  result.fractions = fractions;
  for (const MethodFlags& m : grid) result.methods.push_back(m.label());

  struct Job {
    std::size_t cell;
    std::size_t slot;
    RunConfig config;
  };
  std::vector<Job> work;
  for (const MethodFlags& m : grid) {
    for (int f : fractions) {
      SweepCell cell;
      cell.method = m.label();
      cell.fraction = f;
      cell.epochs = base.epochs;
      cell.runs.resize(seeds.size());
      for (std::size_t s = 0; s < seeds.size(); ++s) {
        RunConfig rc = base;
        rc.method = m;
        rc.fraction = f;
        rc.seed = seeds[s];
        rc.validate();
        cell.runs[s].seed = seeds[s];
        work.push_back({result.cells.size(), s, std::move(rc)});
      }
      result.cells.push_back(std::move(cell));
    }
  }

  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < work.size(); i = next++) {
      const Job& job = work[i];
      SeedOutcome& out = result.cells[job.cell].runs[job.slot];
      const auto start = std::chrono::steady_clock::now();
      try {
        const RunResult r = train(job.config, data);
        out.ok = true;
        out.accuracy = 100.0 * r.test_accuracy;
        out.D_l = r.bounds.D_l;
        out.rho_min = r.bounds.rho_min;
        out.k_hat = r.bounds.k_hat_mean;
        out.dl2w2 = r.bounds.dl2w2_max;
      } catch (const std::exception& e) {
        out.ok = false;
        out.error = e.what();
      }
      out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      if (verbose) {
        std::lock_guard<std::mutex> lock(log_mutex);
        std::cerr << job.config.method.label() << " fraction=" << job.config.fraction << " seed=" << job.config.seed
                  << (out.ok ? " accuracy=" + format_double(out.accuracy, "%.2f") : " FAILED: " + out.error)
                  << " D_l=" << format_double(out.D_l, "%.4g") << " (" << format_double(out.seconds, "%.1f")
                  << " s)\n";
      }
    }
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(work.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  bool any_ok = false;
  for (SweepCell& cell : result.cells) {
    cell.aggregate();
    any_ok = any_ok || cell.seeds > 0;
  }
  if (!any_ok) {
    const std::string first = result.cells.front().runs.front().error;
    throw NumericError("sweep failed: every run failed (first error: " + first + ")");
  }
  return result;
}

// ---------------------------------------------------------------------------
// Reports

std::string render_report(const SweepResult& result, ReportFormat format) {
  if (result.cells.empty()) throw UsageError("cannot report an empty sweep");
  std::ostringstream out;
  if (format == ReportFormat::csv) {
    out << "method,fraction,mean,std,seeds,D_l,rho_min,K_hat,dl2w2,epochs,seconds,failures\n";
    for (const SweepCell& c : result.cells) {
      out << c.method << ',' << c.fraction << ',' << format_double(c.mean) << ',' << format_double(c.std) << ','
          << c.seeds << ',' << format_double(c.D_l) << ',' << format_double(c.rho_min) << ','
          << format_double(c.k_hat) << ',' << format_double(c.dl2w2) << ',' << c.epochs << ','
          << format_double(c.seconds) << ',' << c.failures << '\n';
    }
    return out.str();
  }

  std::vector<std::string> methods = result.methods;
  std::vector<int> fractions = result.fractions;
  for (const SweepCell& c : result.cells) {
    if (std::find(methods.begin(), methods.end(), c.method) == methods.end()) methods.push_back(c.method);
    if (std::find(fractions.begin(), fractions.end(), c.fraction) == fractions.end()) fractions.push_back(c.fraction);
  }
  out << "| method |";
  for (int f : fractions) out << ' ' << f << "% |";
  out << "\n|---|";
  for (std::size_t i = 0; i < fractions.size(); ++i) out << "---|";
  out << '\n';
  for (const std::string& m : methods) {
    out << "| " << m << " |";
    for (int f : fractions) {
      const SweepCell* c = result.find(m, f);
      if (!c) {
        out << " n/a |";
      } else if (c->seeds == 0) {
        out << " failed |";
      } else {
        out << ' ' << format_double(c->mean, "%.2f") << "±" << format_double(c->std, "%.2f");
        if (c->failures) out << " (" << c->failures << " failed)";
        out << " |";
      }
    }
    out << '\n';
  }
  return out.str();
}

void write_report(const SweepResult& result, ReportFormat format, const std::filesystem::path& path) {
  const std::string text = render_report(result, format);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write report to " + path.string());
  f << text;
  f.close();
  if (!f) throw DataError("failed writing report to " + path.string());
}

SweepResult read_report_csv(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open report " + path.string());
  std::string line;
  if (!std::getline(f, line) || line.rfind("method,fraction,mean,std,seeds", 0) != 0) {
    throw DataError("report " + path.string() + ": missing CSV header");
  }
  SweepResult result;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto cols = split(line, ',');
    if (cols.size() != 12) throw DataError("report " + path.string() + ": expected 12 columns in '" + line + "'");
    SweepCell c;
    c.method = cols[0];
    c.fraction = static_cast<int>(parse_number(cols[1], "fraction"));
    c.mean = parse_number(cols[2], "mean");
    c.std = parse_number(cols[3], "std");
    c.seeds = static_cast<std::size_t>(parse_number(cols[4], "seeds"));
    c.D_l = parse_number(cols[5], "D_l");
    c.rho_min = parse_number(cols[6], "rho_min");
    c.k_hat = parse_number(cols[7], "K_hat");
    c.dl2w2 = parse_number(cols[8], "dl2w2");
    c.epochs = static_cast<int>(parse_number(cols[9], "epochs"));
    c.seconds = parse_number(cols[10], "seconds");
    c.failures = static_cast<std::size_t>(parse_number(cols[11], "failures"));
    if (std::find(result.methods.begin(), result.methods.end(), c.method) == result.methods.end()) {
      result.methods.push_back(c.method);
    }
    if (std::find(result.fractions.begin(), result.fractions.end(), c.fraction) == result.fractions.end()) {
      result.fractions.push_back(c.fraction);
    }
    result.cells.push_back(std::move(c));
  }
  if (result.cells.empty()) throw DataError("report " + path.string() + " has no rows");
  return result;
}

}  // namespace hyperbound
