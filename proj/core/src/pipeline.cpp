#include "imuot/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "imuot/adapt.hpp"
#include "imuot/baseline.hpp"
#include "imuot/csv.hpp"
#include "imuot/dataset_io.hpp"
#include "imuot/error.hpp"
#include "imuot/eval.hpp"

#ifndef IMUOT_VERSION
#define IMUOT_VERSION "0.0.0"
#endif

namespace imuot::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<OptionSpec> kTrainOptions = {
    {"head", "cartesian", "regressor head: cartesian or polar"},
    {"no-magnetometer", "false", "drop the three magnetometer channels", true},
    {"epochs", "30", "training epochs"},
    {"batch", "8", "sequences per batch"},
    {"lr", "0.001", "Adam learning rate"},
    {"grad-clip", "0", "global gradient norm clip (0 disables)"},
    {"seed", "1", "training seed"},
};

const std::vector<OptionSpec> kOtOptions = {
    {"ot-subsample", "128", "windows per side entering each transport problem"},
    {"alpha", "0.01", "latent weight in the joint cost"},
    {"epsilon-scale", "0.1", "entropic regularisation relative to the mean cost"},
    {"align-weight", "1", "weight of the alignment term"},
    {"sinkhorn-iters", "500", "Sinkhorn iteration cap per transport problem"},
    {"sinkhorn-tol", "1e-6", "largest allowed marginal error for Sinkhorn convergence"},
    {"max-retries", "2", "Sinkhorn retries with doubled epsilon before a batch is skipped"},
    {"per-target", "false", "one target domain per batch instead of pooling", true},
    {"self-label-cost", "false", "include the label term in the self transport costs", true},
};

std::vector<OptionSpec> concat(std::vector<OptionSpec> a, const std::vector<OptionSpec>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

const std::map<std::string, std::vector<OptionSpec>, std::less<>>& option_table() {
  static const std::map<std::string, std::vector<OptionSpec>, std::less<>> table = {
      {"generate",
       {{"out", "", "dataset directory to create", false, true},
        {"seed", "1", "dataset seed"},
        {"seqs-per-domain", "100", "20 s sequences per domain"},
        {"train-fraction", "0.8", "fraction of sequences in the training split"},
        {"noise", "default", "default or none"},
        {"accel-sigma", "0.05", "accelerometer white noise (m/s^2)"},
        {"gyro-sigma", "0.005", "gyroscope white noise (rad/s)"},
        {"mag-sigma", "0.01", "magnetometer white noise"},
        {"accel-bias", "0.05", "accelerometer bias range per axis"},
        {"gyro-bias", "0.002", "gyroscope bias range per axis"},
        {"gt-jitter", "0", "groundtruth position jitter (m)"},
        {"noise-sharing", "shared", "per_domain, shared_bias or shared"}}},
      {"train",
       concat({{"data", "", "dataset directory", false, true},
               {"out", "", "experiment directory", false, true},
               {"domains", "0", "training domains, e.g. 2, 0..3 or 0,4"},
               {"per-domain", "false", "train one model per listed domain", true}},
              kTrainOptions)},
      {"adapt",
       concat(concat({{"data", "", "dataset directory", false, true},
                      {"out", "", "experiment directory", false, true},
                      {"method", "ot", "ot or aug"},
                      {"source", "0..3", "source domains 0..m (m + 1 domains)"},
                      {"sweep", "false", "run every source count 1..8", true},
                      {"source-counts", "", "comma separated source counts, overrides --source"}},
                     kTrainOptions),
              kOtOptions)},
      {"eval",
       {{"data", "", "dataset directory", false, true},
        {"out", "", "experiment directory", false, true},
        {"method", "ot", "ot, aug, fragility, fusion or checkpoint"},
        {"checkpoint", "", "checkpoint file for --method checkpoint"},
        {"domains", "0..7", "domains evaluated by fusion and checkpoint runs"},
        {"split", "test", "test or train"},
        {"metric", "final", "final (endpoint error) or ate"},
        {"gain", "0.02", "complementary filter gain for fusion"}}},
      {"shift",
       {{"data", "", "dataset directory", false, true},
        {"out", "", "experiment directory", false, true},
        {"models", "", "directory holding train_d<k> models (default: --out)"},
        {"latent", "auto", "auto, yes or no"},
        {"subsample", "256", "latent windows per domain"},
        {"seed", "1", "subsample seed"},
        {"cdf-points", "1000", "rows per CDF table"}}},
      {"report", {{"out", "", "experiment directory", false, true}}},
  };
  return table;
}

class Context {
 public:
  Context(std::string command, const Options& given, std::ostream& log)
      : command_(std::move(command)), log_(log) {
    const auto& specs = options_for(command_);
    for (const auto& [key, value] : given) {
      const bool known = std::any_of(specs.begin(), specs.end(), [&](const OptionSpec& s) { return s.name == key; });
      if (!known) throw ArgumentError("unknown option '" + key + "' for " + command_);
    }
    for (const auto& s : specs) {
      const auto it = given.find(s.name);
      std::string v = it != given.end() ? it->second : s.default_value;
      if (s.required && v.empty()) throw ArgumentError("--" + s.name + " is required for " + command_);
      if (s.flag && v != "true" && v != "false") throw ArgumentError("--" + s.name + " expects true or false");
      resolved_[s.name] = v;
    }
    out_ = resolve_output(resolved_.at("out"));
    resolved_["out"] = out_.string();
  }

  const std::string& str(const std::string& key) const { return resolved_.at(key); }
  bool flag(const std::string& key) const { return resolved_.at(key) == "true"; }
  int integer(const std::string& key) const {
    const std::string& s = str(key);
    int v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw ArgumentError("--" + key + " expects an integer");
    return v;
  }
  double real(const std::string& key) const {
    try {
      return parse_double(str(key));
    } catch (const std::exception&) {
      throw ArgumentError("--" + key + " expects a number");
    }
  }
  std::uint64_t seed(const std::string& key) const {
    const std::string& s = str(key);
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw ArgumentError("--" + key + " expects an unsigned integer");
    return v;
  }

  const fs::path& out() const { return out_; }
  std::ostream& log() { return log_; }
  const Options& resolved() const { return resolved_; }

  fs::path emit(const fs::path& p) {
    emitted_.push_back(p);
    return p;
  }
  const std::vector<fs::path>& emitted() const { return emitted_; }

  template <class F>
  auto stage(const std::string& name, F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    auto finish = [&] {
      stages_.emplace_back(name, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    };
    try {
      if constexpr (std::is_void_v<decltype(f())>) {
        f();
        finish();
      } else {
        auto r = f();
        finish();
        return r;
      }
    } catch (const ArgumentError& e) {
      throw ArgumentError("stage " + name + ": " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError("stage " + name + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("stage " + name + ": " + e.what());
    } catch (const NumericalError& e) {
      throw NumericalError("stage " + name + ": " + e.what());
    }
  }
  const std::vector<std::pair<std::string, double>>& stages() const { return stages_; }

 private:
  std::string command_;
  std::ostream& log_;
  Options resolved_;
  fs::path out_;
  std::vector<fs::path> emitted_;
  std::vector<std::pair<std::string, double>> stages_;
};

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
}

fs::path canonical_or_absolute(const fs::path& p) {
  std::error_code ec;
  const fs::path c = fs::weakly_canonical(p, ec);
  return ec ? fs::absolute(p) : c;
}

void refuse_inside(const fs::path& out, const fs::path& data) {
  const fs::path o = canonical_or_absolute(out);
  const fs::path d = canonical_or_absolute(data);
  const auto [mismatch, rest] = std::mismatch(d.begin(), d.end(), o.begin(), o.end());
  if (mismatch == d.end()) throw ArgumentError("--out must not lie inside the dataset directory");
}

Dataset load_data(Context& ctx) {
  const fs::path data = ctx.str("data");
  refuse_inside(ctx.out(), data);
  return ctx.stage("load_dataset", [&] { return load_dataset(data); });
}

WindowingConfig windowing_from(const Context& ctx) {
  WindowingConfig w;
  w.head = parse_head(ctx.str("head"));
  w.use_magnetometer = !ctx.flag("no-magnetometer");
  return w;
}

WindowingConfig windowing_for(const Checkpoint& ck) {
  WindowingConfig w;
  w.head = ck.params.config.head;
  w.window = ck.params.config.window;
  w.steps = kSequenceSamples / w.window;
  w.use_magnetometer = ck.params.config.channels == 9;
  if (!w.use_magnetometer && ck.params.config.channels != 6) {
    throw DataError("checkpoint has an unsupported channel count");
  }
  return w;
}

TrainConfig train_config_from(const Context& ctx, bool with_ot) {
  TrainConfig c;
  c.epochs = ctx.integer("epochs");
  c.batch_sequences = ctx.integer("batch");
  c.learning_rate = ctx.real("lr");
  c.grad_clip = ctx.real("grad-clip");
  c.seed = ctx.seed("seed");
  if (with_ot) {
    c.ot_subsample = ctx.integer("ot-subsample");
    c.alpha = ctx.real("alpha");
    c.epsilon_scale = ctx.real("epsilon-scale");
    c.align_weight = ctx.real("align-weight");
    c.sinkhorn_max_iters = ctx.integer("sinkhorn-iters");
    c.marginal_tol = ctx.real("sinkhorn-tol");
    c.max_retries = ctx.integer("max-retries");
    c.pool_targets = !ctx.flag("per-target");
    c.label_cost_in_self_terms = ctx.flag("self-label-cost");
  }
  c.validate();
  return c;
}

void write_history(Context& ctx, const fs::path& path, const std::vector<HistoryEntry>& history) {
  CsvWriter out(ctx.emit(path), {"epoch", "loss_regression", "loss_alignment"});
  for (const auto& h : history) {
    out.row(std::vector<std::string>{std::to_string(h.epoch), format_double(h.loss_regression),
                                     format_double(h.loss_alignment)});
  }
  out.close();
}

EpochCallback epoch_logger(std::ostream& log, const std::string& label) {
  return [&log, label](const HistoryEntry& h) {
    log << label << " epoch " << h.epoch << " regression " << h.loss_regression << " alignment "
        << h.loss_alignment << '\n';
  };
}

void save_model(Context& ctx, const fs::path& dir, const TrainResult& result, const Options& cell_config) {
  ensure_dir(dir);
  save_checkpoint(ctx.emit(dir / "checkpoint.json"), result.checkpoint);
  write_history(ctx, dir / "history.csv", result.history);
  Options echo = cell_config;
  echo.erase("out");
  write_config_file(ctx.emit(dir / "config.cfg"), echo);
}

void cmd_generate(Context& ctx) {
  DatasetConfig cfg;
  cfg.seqs_per_domain = ctx.integer("seqs-per-domain");
  cfg.train_fraction = ctx.real("train-fraction");
  cfg.groundtruth_jitter = ctx.real("gt-jitter");
  cfg.noise_sharing = parse_noise_sharing(ctx.str("noise-sharing"));
  const std::string noise = ctx.str("noise");
  if (noise == "none") {
    cfg.noise = NoiseSpec::noiseless();
  } else if (noise == "default") {
    cfg.noise.accel_sigma = ctx.real("accel-sigma");
    cfg.noise.gyro_sigma = ctx.real("gyro-sigma");
    cfg.noise.mag_sigma = ctx.real("mag-sigma");
    cfg.noise.accel_bias_range = ctx.real("accel-bias");
    cfg.noise.gyro_bias_range = ctx.real("gyro-bias");
  } else {
    throw ArgumentError("--noise expects default or none");
  }
  const Dataset ds = ctx.stage("simulate", [&] { return build_dataset(cfg, ctx.seed("seed")); });
  ctx.stage("write_dataset", [&] { save_dataset(ctx.out(), ds); });
  ctx.emit(ctx.out() / "dataset.json");
  for (int k = 0; k < kNumDomains; ++k) {
    const fs::path d = ctx.out() / ("domain_" + std::to_string(k));
    for (const char* f : {"imu.csv", "gt.csv", "meta.json"}) ctx.emit(d / f);
  }
  ctx.log() << "wrote " << cfg.seqs_per_domain << " sequences per domain to " << ctx.out().string() << '\n';
}

void cmd_train(Context& ctx) {
  const Dataset ds = load_data(ctx);
  const WindowingConfig w = windowing_from(ctx);
  const TrainConfig tc = train_config_from(ctx, false);
  const auto domains = parse_domain_list(ctx.str("domains"));
  ensure_dir(ctx.out());
  auto run_one = [&](const std::vector<int>& set, const std::string& name) {
    const auto refs = sequences_for(ds, set, Split::kTrain);
    const TrainResult r = ctx.stage("train_" + name, [&] {
      return train_supervised(ds, refs, w, TrackerConfig{}, tc, epoch_logger(ctx.log(), name));
    });
    Options cell = ctx.resolved();
    cell["domains"] = name.substr(name.find('d') + 1);
    save_model(ctx, ctx.out() / name, r, cell);
  };
  if (ctx.flag("per-domain")) {
    for (int k : domains) run_one({k}, "train_d" + std::to_string(k));
  } else {
    std::string name = "train_d" + std::to_string(domains.front());
    if (domains.size() > 1) {
      for (std::size_t i = 1; i < domains.size(); ++i) name += "-" + std::to_string(domains[i]);
    }
    run_one(domains, name);
  }
}

void cmd_adapt(Context& ctx) {
  const Dataset ds = load_data(ctx);
  const WindowingConfig w = windowing_from(ctx);
  const AdaptMethod method = parse_method(ctx.str("method"));
  const TrainConfig tc = train_config_from(ctx, true);
  std::vector<int> counts;
  if (ctx.flag("sweep")) {
    for (int m = 1; m <= kNumDomains; ++m) counts.push_back(m);
  } else if (!ctx.str("source-counts").empty()) {
    counts = parse_domain_list(ctx.str("source-counts"));
  } else {
    const auto src = parse_domain_list(ctx.str("source"));
    for (std::size_t i = 0; i < src.size(); ++i) {
      if (src[i] != static_cast<int>(i)) throw ArgumentError("--source must be a range 0..m");
    }
    counts.push_back(static_cast<int>(src.size()));
  }
  ensure_dir(ctx.out());
  for (int m : counts) {
    if (m < 1 || m > kNumDomains) throw ArgumentError("source counts must lie in 1..8");
    const std::string name = "adapt_" + std::string(method_name(method)) + "_m" + std::to_string(m);
    const TrainResult r = ctx.stage(name, [&] {
      return train_split(ds, method, DomainSplit::consecutive(m), w, TrackerConfig{}, tc,
                         epoch_logger(ctx.log(), name));
    });
    if (r.skipped_batches > 0) ctx.log() << name << " skipped " << r.skipped_batches << " batches\n";
    Options cell = ctx.resolved();
    cell["source"] = "0.." + std::to_string(m - 1);
    cell["sweep"] = "false";
    cell["source-counts"] = "";
    save_model(ctx, ctx.out() / name, r, cell);
  }
}

Split split_from(const Context& ctx) {
  const std::string& s = ctx.str("split");
  if (s == "test") return Split::kTest;
  if (s == "train") return Split::kTrain;
  throw ArgumentError("--split expects test or train");
}

DistanceMetric metric_from(const Context& ctx) {
  const std::string& s = ctx.str("metric");
  if (s == "final") return DistanceMetric::kFinal;
  if (s == "ate") return DistanceMetric::kAteRmse;
  throw ArgumentError("--metric expects final or ate");
}

std::string run_suffix(const Context& ctx) {
  std::string s;
  if (ctx.str("split") != "test") s += "_" + ctx.str("split");
  if (ctx.str("metric") != "final") s += "_" + ctx.str("metric");
  return s;
}

std::vector<SequenceError> eval_checkpoint(Context& ctx, const Dataset& ds, const Checkpoint& ck, int domain,
                                           const std::string& run) {
  EvalConfig ec;
  ec.metric = metric_from(ctx);
  auto errors = evaluate_model(ck, ds, domain, split_from(ctx), windowing_for(ck), ec);
  write_sequence_errors(ctx.emit(ctx.out() / ("errors_" + run + ".csv")), errors);
  return errors;
}

void cmd_eval(Context& ctx) {
  const Dataset ds = load_data(ctx);
  const std::string method = ctx.str("method");
  const std::string suffix = run_suffix(ctx);
  ensure_dir(ctx.out());
  if (method == "ot" || method == "aug") {
    ErrorMatrix m;
    m.kind = MatrixKind::kAdaptationSweep;
    int found = 0;
    for (int count = 1; count <= kNumDomains; ++count) {
      const std::string cell = "adapt_" + method + "_m" + std::to_string(count);
      const fs::path ck_path = ctx.out() / cell / "checkpoint.json";
      if (!fs::exists(ck_path)) continue;
      ++found;
      const Checkpoint ck = load_checkpoint(ck_path);
      ctx.stage("eval_" + cell, [&] {
        for (int j = 0; j < kNumDomains; ++j) {
          const auto e = eval_checkpoint(ctx, ds, ck, j, cell + "_d" + std::to_string(j) + suffix);
          m.values(count - 1, j) = p90_distance(e);
        }
      });
    }
    if (found == 0) throw DataError("no adapt_" + method + "_m<m> checkpoints under " + ctx.out().string());
    write_error_matrix(ctx.emit(ctx.out() / ("error_matrix_" + method + suffix + ".csv")), m);
  } else if (method == "fragility") {
    ErrorMatrix m;
    m.kind = MatrixKind::kFragility;
    for (int i = 0; i < kNumDomains; ++i) {
      const std::string cell = "train_d" + std::to_string(i);
      const fs::path ck_path = ctx.out() / cell / "checkpoint.json";
      if (!fs::exists(ck_path)) throw ArgumentError("missing checkpoint " + ck_path.string());
      const Checkpoint ck = load_checkpoint(ck_path);
      ctx.stage("eval_" + cell, [&] {
        for (int j = 0; j < kNumDomains; ++j) {
          const auto e = eval_checkpoint(ctx, ds, ck, j, cell + "_on_d" + std::to_string(j) + suffix);
          m.values(i, j) = p90_distance(e);
        }
      });
    }
    write_error_matrix(ctx.emit(ctx.out() / ("error_matrix_fragility" + suffix + ".csv")), m);
  } else if (method == "fusion") {
    const double gain = ctx.real("gain");
    for (int k : parse_domain_list(ctx.str("domains"))) {
      const std::string run = "fusion_d" + std::to_string(k) + suffix;
      const FusionRun fr = ctx.stage("eval_" + run, [&] {
        return evaluate_fusion(ds, k, split_from(ctx), gain, metric_from(ctx));
      });
      write_sequence_errors(ctx.emit(ctx.out() / ("errors_" + run + ".csv")), fr.errors);
      const fs::path traj_dir = ctx.out() / ("trajectories_" + run);
      ensure_dir(traj_dir);
      const Session& s = ds.session(k);
      for (std::size_t q = 0; q < fr.errors.size(); ++q) {
        CsvWriter out(ctx.emit(traj_dir / ("seq_" + std::to_string(fr.errors[q].sequence) + ".csv")),
                      {"t", "x", "y", "phi"});
        const long start = static_cast<long>(fr.errors[q].sequence) * kSequenceSamples;
        const auto& poses = fr.trajectories[q].poses;
        for (std::size_t i = 0; i < poses.size(); ++i) {
          const double row[4] = {s.imu[static_cast<std::size_t>(start) + i].t, poses[i].x, poses[i].y,
                                 poses[i].phi};
          out.row(row);
        }
        out.close();
      }
    }
  } else if (method == "checkpoint") {
    if (ctx.str("checkpoint").empty()) throw ArgumentError("--method checkpoint needs --checkpoint");
    const fs::path ck_path = ctx.str("checkpoint");
    const Checkpoint ck = load_checkpoint(ck_path);
    const std::string stem = ck_path.parent_path().filename().string();
    for (int k : parse_domain_list(ctx.str("domains"))) {
      ctx.stage("eval_d" + std::to_string(k), [&] {
        eval_checkpoint(ctx, ds, ck, k, (stem.empty() ? "model" : stem) + "_on_d" + std::to_string(k) + suffix);
      });
    }
  } else {
    throw ArgumentError("--method expects ot, aug, fragility, fusion or checkpoint");
  }
}

void cmd_shift(Context& ctx) {
  const Dataset ds = load_data(ctx);
  ensure_dir(ctx.out());
  const int cdf_points = ctx.integer("cdf-points");
  const RawShift raw = ctx.stage("raw_shift", [&] { return raw_shift_matrix(ds, cdf_points); });
  write_shift_matrix(ctx.emit(ctx.out() / "shift_raw.csv"), raw.matrix);
  for (int k = 0; k < kNumDomains; ++k) {
    write_cdf(ctx.emit(ctx.out() / ("cdf_domain_" + std::to_string(k) + ".csv")), raw.cdfs[static_cast<std::size_t>(k)]);
  }
  const std::string latent = ctx.str("latent");
  if (latent != "auto" && latent != "yes" && latent != "no") throw ArgumentError("--latent expects auto, yes or no");
  if (latent == "no") return;
  const fs::path models_dir = ctx.str("models").empty() ? ctx.out() : fs::path(ctx.str("models"));
  std::vector<fs::path> paths;
  for (int k = 0; k < kNumDomains; ++k) paths.push_back(models_dir / ("train_d" + std::to_string(k)) / "checkpoint.json");
  const bool all = std::all_of(paths.begin(), paths.end(), [](const fs::path& p) { return fs::exists(p); });
  if (!all) {
    if (latent == "yes") throw ArgumentError("latent shift needs train_d0..train_d7 under " + models_dir.string());
    ctx.log() << "per-domain models not found; skipping the latent shift matrix\n";
    return;
  }
  std::vector<Checkpoint> models;
  for (const auto& p : paths) models.push_back(load_checkpoint(p));
  LatentShiftConfig lc;
  lc.subsample = ctx.integer("subsample");
  lc.seed = ctx.seed("seed");
  const ShiftMatrix m = ctx.stage("latent_shift", [&] {
    return latent_shift_matrix(models, ds, windowing_for(models.front()), lc);
  });
  write_shift_matrix(ctx.emit(ctx.out() / "shift_latent.csv"), m);
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? std::nan("") : s / static_cast<double>(v.size());
}

std::string cell_text(double v) { return std::isnan(v) ? std::string() : format_double(v); }

void cmd_report(Context& ctx) {
  const fs::path out = ctx.out();
  if (!fs::is_directory(out)) throw DataError("no experiment directory " + out.string());
  CsvWriter summary(ctx.emit(out / "summary.csv"),
                    {"method", "m", "p90_seen_mean", "p90_unseen_mean", "p90_all_mean"});
  int rows = 0;
  for (const char* method : {"aug", "ot"}) {
    const fs::path p = out / ("error_matrix_" + std::string(method) + ".csv");
    if (!fs::exists(p)) continue;
    const ErrorMatrix m = read_error_matrix(p);
    for (int r = 0; r < kNumDomains; ++r) {
      if (!m.row_populated(r)) continue;
      std::vector<double> seen, unseen, all;
      for (int c = 0; c < kNumDomains; ++c) {
        (c <= r ? seen : unseen).push_back(m.values(r, c));
        all.push_back(m.values(r, c));
      }
      summary.row(std::vector<std::string>{method, std::to_string(r + 1), cell_text(mean_of(seen)),
                                           cell_text(mean_of(unseen)), cell_text(mean_of(all))});
      ++rows;
    }
  }
  summary.close();

  CsvWriter base(ctx.emit(out / "summary_baselines.csv"), {"source", "metric", "value"});
  const fs::path frag = out / "error_matrix_fragility.csv";
  if (fs::exists(frag)) {
    const ErrorMatrix m = read_error_matrix(frag);
    std::vector<double> diag, medians;
    for (int i = 0; i < kNumDomains; ++i) {
      diag.push_back(m.values(i, i));
      std::vector<double> off;
      for (int j = 0; j < kNumDomains; ++j) {
        if (j != i) off.push_back(m.values(i, j));
      }
      std::sort(off.begin(), off.end());
      medians.push_back(0.5 * (off[off.size() / 2 - 1] + off[off.size() / 2]));
    }
    base.row(std::vector<std::string>{"fragility", "p90_own_domain_mean", cell_text(mean_of(diag))});
    base.row(std::vector<std::string>{"fragility", "p90_other_domain_median_mean", cell_text(mean_of(medians))});
  }
  for (int k = 0; k < kNumDomains; ++k) {
    const fs::path p = out / ("errors_fusion_d" + std::to_string(k) + ".csv");
    if (!fs::exists(p)) continue;
    const CsvTable t = read_csv(p);
    const std::size_t dc = t.column("distance_error");
    const std::size_t hc = t.column("heading_error");
    std::vector<double> d, h;
    for (const auto& row : t.rows) {
      d.push_back(parse_double(row[dc]));
      h.push_back(parse_double(row[hc]));
    }
    const std::string src = "fusion_d" + std::to_string(k);
    base.row(std::vector<std::string>{src, "p90_distance_error", format_double(percentile(d, 90.0))});
    base.row(std::vector<std::string>{src, "p90_heading_error", format_double(percentile(h, 90.0))});
  }
  const fs::path raw = out / "shift_raw.csv";
  const fs::path lat = out / "shift_latent.csv";
  if (fs::exists(raw) && fs::exists(lat)) {
    const auto a = upper_triangle(read_shift_matrix(raw).values);
    const auto b = upper_triangle(read_shift_matrix(lat).values);
    base.row(std::vector<std::string>{"shift", "spearman_raw_latent", format_double(spearman(a, b))});
  }
  base.close();
  ctx.log() << "summary: " << rows << " (method, m) rows\n";
}

std::string hex(const unsigned char* data, unsigned len) {
  std::ostringstream s;
  for (unsigned i = 0; i < len; ++i) s << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(data[i]);
  return s.str();
}

}  // namespace

const std::vector<std::string>& commands() {
  static const std::vector<std::string> names = {"generate", "train", "adapt", "eval", "shift", "report"};
  return names;
}

const std::vector<OptionSpec>& options_for(std::string_view command) {
  const auto& table = option_table();
  const auto it = table.find(command);
  if (it == table.end()) throw ArgumentError("unknown command '" + std::string(command) + "'");
  return it->second;
}

Options read_config_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("cannot read config " + path.string());
  Options opts;
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ArgumentError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    if (key.rfind("--", 0) == 0) key = key.substr(2);
    if (key.empty()) throw ArgumentError(path.string() + ":" + std::to_string(lineno) + ": empty key");
    opts[key] = trim(line.substr(eq + 1));
  }
  return opts;
}

void write_config_file(const fs::path& path, const Options& options) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& [k, v] : options) out << k << " = " << v << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

std::vector<int> parse_domain_list(std::string_view text) {
  auto parse_int = [&](std::string_view s) {
    int v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || p != s.data() + s.size()) {
      throw ArgumentError("bad domain list '" + std::string(text) + "'");
    }
    return v;
  };
  std::vector<int> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto end = comma == std::string_view::npos ? text.size() : comma;
    const auto token = text.substr(start, end - start);
    const auto dots = token.find("..");
    if (dots == std::string_view::npos) {
      out.push_back(parse_int(token));
    } else {
      const int a = parse_int(token.substr(0, dots));
      const int b = parse_int(token.substr(dots + 2));
      if (b < a) throw ArgumentError("empty domain range '" + std::string(text) + "'");
      for (int k = a; k <= b; ++k) out.push_back(k);
    }
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  std::set<int> seen;
  for (int k : out) {
    if (k < 0 || k >= kNumDomains) throw ArgumentError("domain index " + std::to_string(k) + " outside 0..7");
    if (!seen.insert(k).second) throw ArgumentError("duplicate domain " + std::to_string(k));
  }
  return out;
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  EVP_MD_CTX* md = EVP_MD_CTX_new();
  if (!md || EVP_DigestInit_ex(md, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(md);
    throw DataError("sha256 unavailable");
  }
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    const auto n = in.gcount();
    if (n > 0) EVP_DigestUpdate(md, buf.data(), static_cast<std::size_t>(n));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  EVP_DigestFinal_ex(md, digest, &len);
  EVP_MD_CTX_free(md);
  return hex(digest, len);
}

void write_manifest(const fs::path& path, const RunManifest& m) {
  json stages = json::array();
  for (const auto& [name, secs] : m.stages) stages.push_back({{"stage", name}, {"seconds", secs}});
  const json doc = {{"format", "imuot-manifest"},
                    {"command", m.command},
                    {"version", m.version},
                    {"output_dir", m.output_dir.string()},
                    {"config", m.config},
                    {"stages", stages},
                    {"checksums", m.checksums}};
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << doc.dump(2) << '\n';
    if (!out) throw DataError("failed writing " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw DataError("cannot move manifest into place: " + ec.message());
}

RunManifest read_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("cannot read manifest " + path.string());
  try {
    json doc;
    in >> doc;
    if (doc.at("format").get<std::string>() != "imuot-manifest") throw DataError("not a manifest: " + path.string());
    RunManifest m;
    m.command = doc.at("command").get<std::string>();
    m.version = doc.at("version").get<std::string>();
    m.output_dir = doc.at("output_dir").get<std::string>();
    m.config = doc.at("config").get<Options>();
    for (const auto& s : doc.at("stages")) m.stages.emplace_back(s.at("stage").get<std::string>(), s.at("seconds").get<double>());
    m.checksums = doc.at("checksums").get<std::map<std::string, std::string>>();
    return m;
  } catch (const json::exception& e) {
    throw DataError("malformed manifest " + path.string() + ": " + e.what());
  }
}

std::string manifest_variant(std::string_view command, const Options& config) {
  if (command != "adapt" && command != "eval") return {};
  const auto it = config.find("method");
  std::string v = it == config.end() ? std::string() : it->second;
  if (command == "eval") {
    for (const char* key : {"split", "metric"}) {
      const auto k = config.find(key);
      if (k != config.end() && k->second != (std::string_view(key) == "split" ? "test" : "final")) v += "_" + k->second;
    }
  }
  return v;
}

fs::path manifest_path(std::string_view command, const fs::path& out, std::string_view variant) {
  if (command == "generate") {
    fs::path p = out;
    if (!p.has_filename()) p = p.parent_path();
    return p.string() + ".manifest.json";
  }
  std::string name = "manifest_" + std::string(command);
  if (!variant.empty()) name += "_" + std::string(variant);
  return out / (name + ".json");
}

fs::path resolve_output(const std::string& out) {
  fs::path p(out);
  if (p.is_relative()) {
    if (const char* root = std::getenv("IMUOT_OUTPUT_ROOT"); root && *root) p = fs::path(root) / p;
  }
  return fs::absolute(p).lexically_normal();
}

RunManifest run(std::string_view command, const Options& options, std::ostream& log) {
  Context ctx(std::string(command), options, log);
  if (command == "generate") {
    cmd_generate(ctx);
  } else if (command == "train") {
    cmd_train(ctx);
  } else if (command == "adapt") {
    cmd_adapt(ctx);
  } else if (command == "eval") {
    cmd_eval(ctx);
  } else if (command == "shift") {
    cmd_shift(ctx);
  } else if (command == "report") {
    cmd_report(ctx);
  } else {
    throw ArgumentError("unknown command '" + std::string(command) + "'");
  }

  RunManifest m;
  m.command = std::string(command);
  m.version = IMUOT_VERSION;
  m.config = ctx.resolved();
  m.stages = ctx.stages();
  m.output_dir = ctx.out();
  for (const auto& p : ctx.emitted()) {
    m.checksums[p.lexically_relative(ctx.out()).generic_string()] = sha256_file(p);
  }
  const fs::path mp = manifest_path(command, ctx.out(), manifest_variant(command, m.config));
  ensure_dir(mp.parent_path());
  write_manifest(mp, m);
  return m;
}

RerunReport rerun(const fs::path& manifest, const std::optional<std::string>& out, std::ostream& log) {
  RerunReport report;
  report.original = read_manifest(manifest);
  Options opts = report.original.config;
  if (out) opts["out"] = *out;
  report.fresh = run(report.original.command, opts, log);
  for (const auto& [file, sum] : report.original.checksums) {
    const auto it = report.fresh.checksums.find(file);
    if (it == report.fresh.checksums.end() || it->second != sum) report.mismatched.push_back(file);
  }
  return report;
}

int exit_code(const std::exception& e) {
  if (dynamic_cast<const DataError*>(&e)) return 2;
  if (dynamic_cast<const NumericalError*>(&e)) return 3;
  if (dynamic_cast<const std::invalid_argument*>(&e)) return 1;
  return 3;
}

}  // namespace imuot::pipeline
