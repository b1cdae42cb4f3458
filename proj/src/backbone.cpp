#include "sma/backbone.hpp"

#include <cmath>

namespace sma {

namespace {

Tensor he_normal(Shape shape, Rng& rng) {
  const std::size_t fan_in = shape[1] * shape[2] * shape[3];
  const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.normal() * std_dev;
  return Tensor::from(std::move(shape), std::move(v), true);
}

void fill_uniform(Tensor& t, Rng& rng, double scale) {
  for (auto& v : t.mutable_data()) v = rng.uniform(-scale, scale);
}

bool block_has_sma(const BackboneConfig& cfg, std::size_t stage, std::size_t index) {
  switch (cfg.placement) {
    case SmaPlacement::kAllBlocks:
      return true;
    case SmaPlacement::kFirstTwoBlocks:
      return stage * cfg.blocks_per_stage + index < 2;
    case SmaPlacement::kNone:
      return false;
  }
  return false;
}

std::string block_name(std::size_t stage, std::size_t index) {
  return "stage" + std::to_string(stage + 1) + ".block" + std::to_string(index);
}

}  // namespace

BackboneConfig BackboneConfig::toy() { return BackboneConfig{}; }

BackboneConfig BackboneConfig::resnet18() {
  BackboneConfig cfg;
  cfg.stage_widths = {64, 128, 256, 512};
  cfg.input_size = 256;
  cfg.stem = StemKind::kImageNet;
  return cfg;
}

void BackboneConfig::validate() const {
  for (std::size_t i = 0; i < stage_widths.size(); ++i) {
    if (stage_widths[i] == 0) throw ConfigError("backbone: stage widths must be positive");
    if (i > 0 && stage_widths[i] < stage_widths[i - 1]) throw ConfigError("backbone: stage widths must be nondecreasing");
  }
  if (blocks_per_stage == 0) throw ConfigError("backbone: blocks_per_stage must be >= 1");
  if (num_outputs == 0) throw ConfigError("backbone: num_outputs must be >= 1");
  if (input_size < 8) throw ConfigError("backbone: input_size too small");
  if (placement != SmaPlacement::kNone) {
    SmaConfig probe = sma;
    probe.in_channels = stage_widths[0];
    probe.validate();
  }
}

void ParamStore::add(std::string name, Tensor tensor, bool trainable) {
  if (index_.count(name)) throw ConfigError("param store: duplicate name " + name);
  index_[name] = entries_.size();
  entries_.push_back({std::move(name), std::move(tensor), trainable});
}

Tensor ParamStore::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("param store: no parameter named " + name);
  return entries_[it->second].tensor;
}

std::size_t ParamStore::trainable_count() const { return trainable_count_with_prefix(""); }

std::size_t ParamStore::trainable_count_with_prefix(const std::string& prefix) const {
  std::size_t total = 0;
  for (const auto& e : entries_) {
    if (e.trainable && e.name.compare(0, prefix.size(), prefix) == 0) total += e.tensor.numel();
  }
  return total;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

BatchNorm BatchNorm::identity(std::size_t channels) {
  BatchNorm bn;
  bn.gamma = Tensor::full({channels}, 1.0, true);
  bn.beta = Tensor::zeros({channels}, true);
  bn.state.running_mean = Tensor::zeros({channels});
  bn.state.running_var = Tensor::full({channels}, 1.0);
  return bn;
}

void BatchNorm::register_in(ParamStore& store, const std::string& prefix) const {
  store.add(prefix + ".weight", gamma);
  store.add(prefix + ".bias", beta);
  store.add(prefix + ".running_mean", state.running_mean, false);
  store.add(prefix + ".running_var", state.running_var, false);
}

BasicBlock BasicBlock::zeros(std::size_t in_channels, std::size_t out_channels, std::size_t stride,
                             const std::optional<SmaConfig>& sma_cfg, std::size_t head_outputs) {
  BasicBlock b;
  b.in_channels = in_channels;
  b.out_channels = out_channels;
  b.stride = stride;
  b.conv1 = Tensor::zeros({out_channels, in_channels, 3, 3}, true);
  b.bn1 = BatchNorm::identity(out_channels);
  b.conv2 = Tensor::zeros({out_channels, out_channels, 3, 3}, true);
  b.bn2 = BatchNorm::identity(out_channels);
  if (stride != 1 || in_channels != out_channels) {
    b.down_conv = Tensor::zeros({out_channels, in_channels, 1, 1}, true);
    b.down_bn = BatchNorm::identity(out_channels);
  }
  if (sma_cfg) {
    SmaConfig cfg = *sma_cfg;
    cfg.in_channels = out_channels;
    b.sma_cfg = cfg;
    b.sma = SmaParams::zeros(cfg);
    if (head_outputs > 0) b.heads = BypassHeads::zeros(cfg.n_channels, out_channels, head_outputs);
  }
  return b;
}

void BasicBlock::register_in(ParamStore& store, const std::string& prefix) const {
  store.add(prefix + ".conv1.weight", conv1);
  bn1.register_in(store, prefix + ".bn1");
  store.add(prefix + ".conv2.weight", conv2);
  bn2.register_in(store, prefix + ".bn2");
  if (down_conv.defined()) {
    store.add(prefix + ".downsample.conv.weight", down_conv);
    down_bn->register_in(store, prefix + ".downsample.bn");
  }
  for (const auto& [name, t] : sma.named()) store.add(prefix + ".sma." + name, t);
  for (const auto& [name, t] : heads.named()) store.add(prefix + ".sma." + name, t);
}

BlockResult basic_block_forward(const Tensor& x, BasicBlock& block, bool training) {
  if (x.rank() != 4 || x.dim(1) != block.in_channels) {
    throw DimensionError("basic_block: expected " + std::to_string(block.in_channels) + " channels, got " +
                         shape_str(x.shape()));
  }
  Tensor h = conv2d(x, block.conv1, {}, {.stride = block.stride, .padding = 1, .groups = 1});
  h = relu(block.bn1.forward(h, training));
  h = conv2d(h, block.conv2, {}, {.stride = 1, .padding = 1, .groups = 1});
  h = block.bn2.forward(h, training);

  BlockResult r;
  r.sma_input = h;
  if (block.sma_cfg) {
    r.sma = sma_block_forward(h, *block.sma_cfg, block.sma);
    h = r.sma->refined;
  }
  Tensor shortcut = x;
  if (block.down_conv.defined()) {
    shortcut = conv2d(x, block.down_conv, {}, {.stride = block.stride, .padding = 0, .groups = 1});
    shortcut = block.down_bn->forward(shortcut, training);
  }
  if (shortcut.shape() != h.shape()) {
    throw DimensionError("basic_block: residual " + shape_str(shortcut.shape()) + " vs branch " +
                         shape_str(h.shape()));
  }
  r.output = relu(add(shortcut, h));
  return r;
}

Backbone::Backbone(const BackboneConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(derive_seed(init_seed, "init"));
  const std::size_t w0 = cfg_.stage_widths[0];
  const std::size_t stem_k = cfg_.stem == StemKind::kSmall ? 3 : 7;
  stem_conv_ = he_normal({w0, 3, stem_k, stem_k}, rng);
  stem_bn_ = BatchNorm::identity(w0);
  store_.add("stem.conv.weight", stem_conv_);
  stem_bn_.register_in(store_, "stem.bn");

  const std::size_t head_outputs = cfg_.bypass_heads ? cfg_.num_outputs : 0;
  std::size_t in_ch = w0;
  for (std::size_t s = 0; s < cfg_.stage_widths.size(); ++s) {
    for (std::size_t i = 0; i < cfg_.blocks_per_stage; ++i) {
      const std::size_t out_ch = cfg_.stage_widths[s];
      const std::size_t stride = (s > 0 && i == 0) ? 2 : 1;
      std::optional<SmaConfig> sma_cfg;
      if (block_has_sma(cfg_, s, i)) sma_cfg = cfg_.sma;
      BasicBlock block = BasicBlock::zeros(in_ch, out_ch, stride, sma_cfg, head_outputs);
      block.conv1 = he_normal(block.conv1.shape(), rng);
      block.conv2 = he_normal(block.conv2.shape(), rng);
      if (block.down_conv.defined()) block.down_conv = he_normal(block.down_conv.shape(), rng);
      if (block.sma_cfg) block.sma = SmaParams::fan_in(*block.sma_cfg, rng);
      for (auto& w : block.heads.weights) fill_uniform(w, rng, 1.0 / std::sqrt(static_cast<double>(out_ch)));
      block.register_in(store_, block_name(s, i));
      blocks_.push_back(std::move(block));
      in_ch = out_ch;
    }
  }
  fc_weight_ = Tensor::zeros({cfg_.num_outputs, in_ch}, true);
  fill_uniform(fc_weight_, rng, 1.0 / std::sqrt(static_cast<double>(in_ch)));
  fc_bias_ = Tensor::zeros({cfg_.num_outputs}, true);
  store_.add("fc.weight", fc_weight_);
  store_.add("fc.bias", fc_bias_);
}

ModelOutput Backbone::forward(const Tensor& images, bool training) {
  if (images.rank() != 4 || images.dim(1) != 3) {
    throw DimensionError("backbone: images must be [B,3,H,W], got " + shape_str(images.shape()));
  }
  ModelOutput out;
  Tensor h;
  if (cfg_.stem == StemKind::kSmall) {
    h = conv2d(images, stem_conv_, {}, {.stride = 1, .padding = 1, .groups = 1});
    h = relu(stem_bn_.forward(h, training));
  } else {
    h = conv2d(images, stem_conv_, {}, {.stride = 2, .padding = 3, .groups = 1});
    h = relu(stem_bn_.forward(h, training));
    h = max_pool2d(h, 3, 2, 1);
  }
  std::size_t k = 0;
  for (std::size_t s = 0; s < cfg_.stage_widths.size(); ++s) {
    for (std::size_t i = 0; i < cfg_.blocks_per_stage; ++i, ++k) {
      BlockResult r = basic_block_forward(h, blocks_[k], training);
      if (r.sma) {
        out.sma_blocks.push_back({block_name(s, i), r.sma_input, std::move(*r.sma),
                                  blocks_[k].heads.size() ? &blocks_[k].heads : nullptr});
      }
      h = r.output;
    }
  }
  const Tensor pooled = reshape(avg_pool(h, {2, 3}), {h.dim(0), h.dim(1)});
  out.logits = linear(pooled, fc_weight_, fc_bias_);
  return out;
}

std::size_t Backbone::param_count(bool include_heads) const {
  std::size_t total = store_.trainable_count();
  if (!include_heads) {
    for (const auto& b : blocks_) total -= b.heads.param_count();
  }
  return total;
}

std::size_t Backbone::sma_param_count(bool include_heads) const {
  std::size_t total = 0;
  for (const auto& b : blocks_) {
    if (b.sma_cfg) total += sma::param_count(*b.sma_cfg);
    if (include_heads) total += b.heads.param_count();
  }
  return total;
}

std::size_t plain_backbone_param_count(const BackboneConfig& cfg) {
  const std::size_t stem_k = cfg.stem == StemKind::kSmall ? 3 : 7;
  const std::size_t w0 = cfg.stage_widths[0];
  std::size_t total = w0 * 3 * stem_k * stem_k + 2 * w0;
  std::size_t in_ch = w0;
  for (std::size_t s = 0; s < cfg.stage_widths.size(); ++s) {
    for (std::size_t i = 0; i < cfg.blocks_per_stage; ++i) {
      const std::size_t out_ch = cfg.stage_widths[s];
      const std::size_t stride = (s > 0 && i == 0) ? 2 : 1;
      total += out_ch * in_ch * 9 + 2 * out_ch + out_ch * out_ch * 9 + 2 * out_ch;
      if (stride != 1 || in_ch != out_ch) total += out_ch * in_ch + 2 * out_ch;
      in_ch = out_ch;
    }
  }
  return total + cfg.num_outputs * in_ch + cfg.num_outputs;
}

std::vector<std::string> sma_block_names(const BackboneConfig& cfg) {
  std::vector<std::string> names;
  for (std::size_t s = 0; s < cfg.stage_widths.size(); ++s) {
    for (std::size_t i = 0; i < cfg.blocks_per_stage; ++i) {
      if (block_has_sma(cfg, s, i)) names.push_back(block_name(s, i));
    }
  }
  return names;
}

void Sgd::step(ParamStore& store) {
  for (auto& e : store.entries()) {
    if (!e.trainable) continue;
    if (!e.tensor.has_grad()) throw NumericError("sgd: no gradient for " + e.name);
    auto p = e.tensor.mutable_data();
    auto g = e.tensor.grad();
    auto& v = velocity_[e.name];
    if (v.empty()) v.assign(p.size(), 0.0);
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = opt_.momentum * v[i] + g[i] + opt_.weight_decay * p[i];
      p[i] -= opt_.lr * v[i];
    }
  }
}

double lr_schedule(std::size_t epoch, ScheduleMode mode) {
  if (mode == ScheduleMode::kAu) return epoch < 2 ? 0.01 : 0.001;
  return 0.01 * std::pow(0.99, static_cast<double>(epoch / 10));
}

}  // namespace sma
