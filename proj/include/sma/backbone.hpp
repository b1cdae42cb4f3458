#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sma/attention.hpp"
#include "sma/losses.hpp"
#include "sma/ops.hpp"
#include "sma/random.hpp"
#include "sma/tensor.hpp"

namespace sma {

enum class SmaPlacement { kAllBlocks, kFirstTwoBlocks, kNone };

/// kSmall: 3x3 stride-1 conv, no pooling (64x64 inputs).
/// kImageNet: 7x7 stride-2 conv followed by 3x3 stride-2 max pooling.
enum class StemKind { kSmall, kImageNet };

struct BackboneConfig {
  std::array<std::size_t, 4> stage_widths{8, 16, 32, 64};
  std::size_t blocks_per_stage = 2;
  SmaPlacement placement = SmaPlacement::kAllBlocks;
  /// Template for every SMA block; in_channels is filled in per block.
  SmaConfig sma;
  Task task = Task::kMultiLabel;
  std::size_t num_outputs = 12;
  std::size_t input_size = 64;
  StemKind stem = StemKind::kSmall;
  /// Per-channel classifiers used by the multi-attention loss.
  bool bypass_heads = true;

  static BackboneConfig toy();
  static BackboneConfig resnet18();
  void validate() const;
};

/// Trainable and non-trainable tensors keyed by hierarchical names, kept in
/// registration order.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
    bool trainable = true;
  };

  void add(std::string name, Tensor tensor, bool trainable = true);
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  Tensor find(const std::string& name) const;
  std::size_t trainable_count() const;
  std::size_t trainable_count_with_prefix(const std::string& prefix) const;
  void zero_grad();

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

struct BatchNorm {
  Tensor gamma;
  Tensor beta;
  BatchNormState state;

  static BatchNorm identity(std::size_t channels);
  Tensor forward(const Tensor& x, bool training) { return batch_norm2d(x, gamma, beta, state, training); }
  void register_in(ParamStore& store, const std::string& prefix) const;
};

struct BasicBlock {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t stride = 1;
  Tensor conv1;
  BatchNorm bn1;
  Tensor conv2;
  BatchNorm bn2;
  Tensor down_conv;  // 1x1, present when stride != 1 or channels change
  std::optional<BatchNorm> down_bn;
  std::optional<SmaConfig> sma_cfg;
  SmaParams sma;
  BypassHeads heads;

  /// Zero convolutions, identity batch norms, zero attention parameters.
  static BasicBlock zeros(std::size_t in_channels, std::size_t out_channels, std::size_t stride,
                          const std::optional<SmaConfig>& sma_cfg, std::size_t head_outputs);
  void register_in(ParamStore& store, const std::string& prefix) const;
};

struct BlockResult {
  Tensor output;
  /// The feature block handed to SMA (output of bn2) and its intermediates.
  Tensor sma_input;
  std::optional<SmaOutput> sma;
};

/// relu(shortcut(x) + SMA(bn2(conv2(relu(bn1(conv1(x))))))), SMA optional.
BlockResult basic_block_forward(const Tensor& x, BasicBlock& block, bool training);

struct SmaBlockTrace {
  std::string name;
  Tensor input;
  SmaOutput output;
  const BypassHeads* heads = nullptr;
};

struct ModelOutput {
  Tensor logits;
  std::vector<SmaBlockTrace> sma_blocks;
};

class Backbone {
 public:
  /// He-normal convolutions, identity batch norm, SmaParams::fan_in attention.
  Backbone(const BackboneConfig& cfg, std::uint64_t init_seed);

  const BackboneConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  std::vector<BasicBlock>& blocks() { return blocks_; }

  /// images: [B,3,H,W] in [0,1].
  ModelOutput forward(const Tensor& images, bool training);

  /// Trainable scalars, optionally without the bypass heads.
  std::size_t param_count(bool include_heads = true) const;
  std::size_t sma_param_count(bool include_heads = true) const;

 private:
  BackboneConfig cfg_;
  Tensor stem_conv_;
  BatchNorm stem_bn_;
  std::vector<BasicBlock> blocks_;
  Tensor fc_weight_;
  Tensor fc_bias_;
  ParamStore store_;
};

/// Closed-form trainable-parameter count of the network without SMA blocks.
std::size_t plain_backbone_param_count(const BackboneConfig& cfg);

/// Names of the blocks that carry SMA, e.g. "stage1.block0".
std::vector<std::string> sma_block_names(const BackboneConfig& cfg);

struct SgdOptions {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

/// v <- momentum v + grad + weight_decay p;  p <- p - lr v.
class Sgd {
 public:
  explicit Sgd(SgdOptions opt = {}) : opt_(opt) {}
  void set_lr(double lr) { opt_.lr = lr; }
  double lr() const { return opt_.lr; }
  /// Throws NumericError if a trainable parameter has no gradient.
  void step(ParamStore& store);
  const std::map<std::string, std::vector<double>>& velocity() const { return velocity_; }

 private:
  SgdOptions opt_;
  std::map<std::string, std::vector<double>> velocity_;
};

enum class ScheduleMode { kAu, kFer };

/// au: 0.01 for the first two epochs, then 0.001. fer: 0.01 * 0.99^floor(epoch/10).
double lr_schedule(std::size_t epoch, ScheduleMode mode);

}  // namespace sma
