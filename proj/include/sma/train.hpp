#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "sma/backbone.hpp"
#include "sma/checkpoint.hpp"
#include "sma/config.hpp"
#include "sma/data.hpp"
#include "sma/losses.hpp"
#include "sma/metrics.hpp"

namespace sma {

struct Objective {
  Tensor total;
  Tensor classification;
  Tensor diversity;        // mean over SMA blocks, 0 without SMA
  Tensor multi_attention;  // mean over SMA blocks with bypass heads, 0 without
};

/// l_cla + alpha l_div + lambda l_ma, with l_div and l_ma averaged over the
/// SMA-bearing blocks. detach_ldiv keeps l_div out of the graph.
Objective compute_objective(const ModelOutput& out, const Targets& targets, const LossConfig& cfg,
                            bool detach_ldiv = false);

struct EvalResult {
  Task task = Task::kMultiLabel;
  LabelCounts counts;
  F1Report f1;
  ConfusionMatrix confusion;
  double accuracy = 0.0;

  /// Macro-F1 (multi-label) or accuracy (multi-class).
  double metric() const { return task == Task::kMultiLabel ? f1.macro_f1 : accuracy; }
  /// F1 rows, or accuracy plus the confusion grid.
  std::string report() const;
};

/// Inference-mode forward over `indices` (all samples when empty) in chunks of
/// batch_size; per-sample results do not depend on batching or order.
EvalResult evaluate(Backbone& model, const std::vector<Sample>& data, const RunConfig& cfg,
                    const std::vector<std::size_t>& indices = {});

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double l_cla = 0.0, l_div = 0.0, l_ma = 0.0, l_all = 0.0;
  double train_metric = 0.0, val_metric = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  double best_val_metric = -1.0;
  std::size_t best_epoch = 0;
  Checkpoint best;
};

inline constexpr const char* kMetricsCsvHeader = "epoch,lr,l_cla,l_div,l_ma,l_all,train_metric,val_metric";
std::string format_epoch_row(const EpochLog& row);

/// SGD training with the task's learning-rate schedule; keeps the parameters
/// of the epoch with the best validation metric (earliest on ties).
/// Progress lines go to `progress` when given.
TrainResult train_model(const RunConfig& cfg, const std::vector<Sample>& train, const std::vector<Sample>& val,
                        std::ostream* progress = nullptr);

/// Train and validation sets for a config: read from data_dir/{train,val}
/// when set, otherwise synthesized from derive_seed(seed, "data").
std::pair<std::vector<Sample>, std::vector<Sample>> load_or_synthesize(const RunConfig& cfg);

}  // namespace sma
