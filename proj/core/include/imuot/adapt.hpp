#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "imuot/eval.hpp"
#include "imuot/ot.hpp"
#include "imuot/tracker.hpp"
#include "imuot/windowing.hpp"

namespace imuot {

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double grad_clip = 0.0;  // global-norm clip, 0 disables
  int epochs = 30;
  int batch_sequences = 8;
  int ot_subsample = 128;
  double alpha = 0.01;          // feature weight in the joint cost
  double epsilon_scale = 0.1;   // lambda_eps = epsilon_scale * mean(C)
  double align_weight = 1.0;    // eta
  int sinkhorn_max_iters = 500;
  double marginal_tol = 1e-6;
  int max_retries = 2;          // each retry doubles epsilon_scale
  bool pool_targets = true;     // false: one target domain per batch, round robin
  bool label_cost_in_self_terms = false;
  std::uint64_t seed = 1;

  void validate() const;
  ot::SinkhornConfig sinkhorn() const;
};

struct DomainSplit {
  std::vector<int> source;
  std::vector<int> target;

  // Source {0..m-1}, target {m..7}.
  static DomainSplit consecutive(int m);
  void validate() const;
};

struct HistoryEntry {
  int epoch = 0;
  double loss_regression = 0.0;
  double loss_alignment = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<HistoryEntry> history;
  int skipped_batches = 0;
};

// Called after every epoch; useful for progress reporting.
using EpochCallback = std::function<void(const HistoryEntry&)>;

class AdamOptimizer {
 public:
  AdamOptimizer(const TrackerParams& like, const TrainConfig& cfg);
  void step(TrackerParams& params, TrackerParams grad);

 private:
  TrainConfig cfg_;
  TrackerParams m_;
  TrackerParams v_;
  int t_ = 0;
};

// Minimises the windowed MSE over the given labelled sequences. Multi-domain
// augmentation is the same call over a union of domains.
TrainResult train_supervised(const Dataset& dataset, std::span<const SequenceRef> train,
                             const WindowingConfig& windowing, const TrackerConfig& tracker,
                             const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// Couplings held fixed while the network takes a gradient step.
struct CouplingSet {
  Matrix cross;     // source x target
  Matrix self_src;  // source x source
  Matrix self_tgt;  // target x target
};

struct JdotTerms {
  double source_mse = 0.0;
  double transported = 0.0;  // sum_ij gamma_ij ||y_i - yhat_j||^2
  double alignment = 0.0;    // W(mu,nu) - 0.5 (W(mu,mu) + W(nu,nu)) at the fixed couplings
  double total = 0.0;        // source_mse + transported + eta * alignment
  bool converged = true;
  CouplingSet couplings;
  TrackerParams gradient;
};

// One DeepJDOT evaluation. `src_rows` / `tgt_rows` index windows (row order b * steps + s)
// that enter the transport problem. When `fixed` is null the three Sinkhorn problems are
// solved at the current parameters; otherwise the given couplings are used as constants.
JdotTerms deepjdot_terms(const TrackerParams& params, const WindowBatch& source,
                         const WindowBatch& target, std::span<const int> src_rows,
                         std::span<const int> tgt_rows, const TrainConfig& cfg,
                         const CouplingSet* fixed = nullptr, bool with_gradient = true);

TrainResult train_deepjdot(const Dataset& dataset, std::span<const SequenceRef> source,
                           std::span<const SequenceRef> target, const WindowingConfig& windowing,
                           const TrackerConfig& tracker, const TrainConfig& cfg,
                           const EpochCallback& on_epoch = {});

enum class AdaptMethod { kOt, kAugmentation };

std::string_view method_name(AdaptMethod m);
AdaptMethod parse_method(std::string_view name);

// Trains one model for a consecutive source split with the given method.
TrainResult train_split(const Dataset& dataset, AdaptMethod method, const DomainSplit& split,
                        const WindowingConfig& windowing, const TrackerConfig& tracker,
                        const TrainConfig& cfg, const EpochCallback& on_epoch = {});

using ModelCallback = std::function<void(int m, const TrainResult&)>;

// For each m in `source_counts` (default 1..8) trains on {0..m-1} and fills row m - 1 with the
// 90th-percentile distance error on every domain's test split.
ErrorMatrix adaptation_sweep(const Dataset& dataset, AdaptMethod method,
                             const WindowingConfig& windowing, const TrackerConfig& tracker,
                             const TrainConfig& cfg, std::span<const int> source_counts = {},
                             const EvalConfig& eval = {}, const ModelCallback& on_model = {});

}  // namespace imuot
