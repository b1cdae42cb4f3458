#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "sma/backbone.hpp"
#include "sma/data.hpp"
#include "sma/losses.hpp"

namespace sma {

enum class Ablation {
  kBaseline,
  kMultiChannel,
  kF2a,
  kAaa,
  kMultiChannelAaa,
  kF2aAaa,
  kF2aAaaLma,
  kF2aAaaLdiv,
  kFull,
};

enum class Profile { kToy, kResNet18 };

inline constexpr int kSchemaVersion = 1;

/// Everything a command needs, read from a flat "key = value" file.
struct RunConfig {
  Task task = Task::kMultiLabel;  // "au" or "fer"
  Profile profile = Profile::kToy;
  Ablation ablation = Ablation::kFull;
  std::uint64_t seed = 1;
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  std::size_t eval_batch_size = 50;
  std::string output_dir = "runs";
  std::string data_dir;  // empty: synthesize in memory

  std::size_t train_size = 2000;
  std::size_t val_size = 500;
  std::size_t num_subjects = 12;
  bool augment = true;

  // Empty / zero means "take the profile default".
  std::vector<std::size_t> stage_widths;
  std::size_t input_size = 0;
  SmaPlacement placement = SmaPlacement::kAllBlocks;

  std::size_t n_channels = 7;
  std::size_t attn_kernel = 7;
  std::size_t mapping_kernel = 1;
  double delta = 0.5;
  CombineOn combine_on = CombineOn::kLogits;

  double alpha = 0.1;
  double lambda = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double threshold = 0.0;  // logit decision threshold

  double resample_threshold = 0.1;
  std::size_t max_duplication = 20;

  /// Diagnostic: the diversity term is logged but cut from the graph.
  bool detach_ldiv = false;

  void validate() const;

  BackboneConfig backbone() const;
  /// Loss weights; pos_weights are filled in from training data by the caller.
  LossConfig loss() const;
  SynthConfig synth() const;
  ResampleConfig resample() const;
  AugmentMode augment_mode() const { return task == Task::kMultiLabel ? AugmentMode::kAu : AugmentMode::kFer; }
  ScheduleMode schedule() const { return task == Task::kMultiLabel ? ScheduleMode::kAu : ScheduleMode::kFer; }
  bool uses_ldiv() const;
  bool uses_lma() const;
  std::size_t num_outputs() const;

  /// Canonical "key = value" text; parse_config(to_text()) round-trips.
  std::string to_text() const;
  /// Hash of every field that shapes the trained model (paths excluded).
  std::uint64_t digest() const;
};

/// Rejects unknown keys, duplicate keys, malformed values and a missing or
/// unsupported schema_version.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::string& path);

/// Applies one "key=value" override on top of an existing config.
void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value);

std::string ablation_name(Ablation a);
Ablation parse_ablation(std::string_view name);
const std::vector<Ablation>& all_ablations();

}  // namespace sma
