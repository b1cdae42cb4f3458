#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "sma/config.hpp"
#include "sma/gradcheck.hpp"

namespace sma {

/// Process exit codes shared by every command.
enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitNumeric = 3,
  kExitThreshold = 4,
  kExitData = 5,
};

/// Writes output_dir/data/{train,val} as manifests plus P6 images.
int cmd_synth(const RunConfig& cfg, std::ostream& out);

/// Writes output_dir/{config.txt, metrics.csv, best.ckpt, val_report.csv}.
int cmd_train(const RunConfig& cfg, std::ostream& out);

/// Evaluates a checkpoint on the validation set. With folds >= 2 the set is
/// split into subject-disjoint folds and one row per fold plus a mean row is
/// reported.
int cmd_eval(const RunConfig& cfg, const std::filesystem::path& checkpoint, std::size_t folds, std::ostream& out);

/// One training run per N; writes output_dir/sweep_n.csv.
int cmd_sweep_n(const RunConfig& cfg, const std::vector<std::size_t>& n_values, std::ostream& out);

struct GradCheckItem {
  std::string name;
  /// Primitive ops this item exercises, for the coverage check.
  std::vector<std::string> covers;
  std::function<GradCheckResult()> run;
};

inline constexpr double kGradCheckTolerance = 1e-4;

/// Every primitive, the attention block, each loss, the combined objective
/// and the full model on a small input.
std::vector<GradCheckItem> gradcheck_registry(const RunConfig& cfg);
/// Names that gradcheck_registry must cover.
const std::vector<std::string>& primitive_ops();

/// Prints "name max_rel_error coords status" per item. Returns kExitThreshold
/// if any item exceeds the tolerance or a primitive is not covered.
int run_gradcheck(const std::vector<GradCheckItem>& items, std::ostream& out);
int cmd_gradcheck(const RunConfig& cfg, std::ostream& out);

/// Per-module trainable counts and overhead against the placement=none twin.
int cmd_params(const RunConfig& cfg, std::ostream& out);

/// For each image and SMA block: A.pgm, m<n>.pgm and a T row in weights.txt.
int cmd_export_attention(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                         const std::vector<std::filesystem::path>& images, std::ostream& out);

/// Runs `body`, mapping exceptions onto exit codes with a message on `err`.
int run_guarded(const std::function<int()>& body, std::ostream& err);

/// Keeps freed memory in the process so repeated large allocations do not
/// fault in fresh pages every training step.
void tune_allocator();

}  // namespace sma
