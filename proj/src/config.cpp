#include "sma/config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <set>

#include "sma/random.hpp"

namespace sma {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  throw ConfigError("config: " + std::string(key) + " = '" + std::string(value) + "' is not " +
                    std::string(expected));
}

std::size_t to_size(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) bad_value(key, v, "a non-negative integer");
  return out;
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) bad_value(key, v, "a non-negative integer");
  return out;
}

double to_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) bad_value(key, v, "a number");
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "true or false");
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_bool(bool v) { return v ? "true" : "false"; }

template <typename E>
struct EnumName {
  E value;
  const char* name;
};

template <typename E, std::size_t N>
E enum_from(std::string_view key, std::string_view v, const EnumName<E> (&table)[N]) {
  std::string expected = "one of";
  for (const auto& e : table) {
    if (v == e.name) return e.value;
    expected += std::string(" ") + e.name;
  }
  bad_value(key, v, expected);
}

template <typename E, std::size_t N>
std::string enum_to(E value, const EnumName<E> (&table)[N]) {
  for (const auto& e : table) {
    if (e.value == value) return e.name;
  }
  return "?";
}

constexpr EnumName<Task> kTasks[] = {{Task::kMultiLabel, "au"}, {Task::kMultiClass, "fer"}};
constexpr EnumName<Profile> kProfiles[] = {{Profile::kToy, "toy"}, {Profile::kResNet18, "resnet18"}};
constexpr EnumName<SmaPlacement> kPlacements[] = {{SmaPlacement::kAllBlocks, "all_blocks"},
                                                  {SmaPlacement::kFirstTwoBlocks, "first_two_blocks"},
                                                  {SmaPlacement::kNone, "none"}};
constexpr EnumName<CombineOn> kCombine[] = {{CombineOn::kLogits, "logits"},
                                            {CombineOn::kMasks, "masks"},
                                            {CombineOn::kAttendedFeatures, "attended_features"}};
constexpr EnumName<Ablation> kAblations[] = {
    {Ablation::kBaseline, "baseline"},
    {Ablation::kMultiChannel, "multi_channel"},
    {Ablation::kF2a, "f2a"},
    {Ablation::kAaa, "aaa"},
    {Ablation::kMultiChannelAaa, "multi_channel_aaa"},
    {Ablation::kF2aAaa, "f2a_aaa"},
    {Ablation::kF2aAaaLma, "f2a_aaa_lma"},
    {Ablation::kF2aAaaLdiv, "f2a_aaa_ldiv"},
    {Ablation::kFull, "full"},
};

std::vector<std::size_t> to_size_list(std::string_view key, std::string_view v) {
  std::vector<std::size_t> out;
  if (v.empty() || v == "default") return out;
  std::size_t start = 0;
  while (start <= v.size()) {
    const auto comma = v.find(',', start);
    const auto part = trim(v.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    out.push_back(to_size(key, part));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string fmt_size_list(const std::vector<std::size_t>& v) {
  if (v.empty()) return "default";
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct Field {
  const char* key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
  bool in_digest = true;
};

#define SMA_SIZE(name) \
  Field { #name, [](RunConfig& c, std::string_view v) { c.name = to_size(#name, v); }, \
          [](const RunConfig& c) { return std::to_string(c.name); } }
#define SMA_DOUBLE(name) \
  Field { #name, [](RunConfig& c, std::string_view v) { c.name = to_double(#name, v); }, \
          [](const RunConfig& c) { return fmt_double(c.name); } }
#define SMA_BOOL(name) \
  Field { #name, [](RunConfig& c, std::string_view v) { c.name = to_bool(#name, v); }, \
          [](const RunConfig& c) { return fmt_bool(c.name); } }
#define SMA_ENUM(name, table) \
  Field { #name, [](RunConfig& c, std::string_view v) { c.name = enum_from(#name, v, table); }, \
          [](const RunConfig& c) { return enum_to(c.name, table); } }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      SMA_ENUM(task, kTasks),
      SMA_ENUM(profile, kProfiles),
      SMA_ENUM(ablation, kAblations),
      Field{"seed", [](RunConfig& c, std::string_view v) { c.seed = to_u64("seed", v); },
            [](const RunConfig& c) { return std::to_string(c.seed); }},
      SMA_SIZE(epochs),
      SMA_SIZE(batch_size),
      Field{"eval_batch_size", [](RunConfig& c, std::string_view v) { c.eval_batch_size = to_size("eval_batch_size", v); },
            [](const RunConfig& c) { return std::to_string(c.eval_batch_size); }, false},
      Field{"output_dir", [](RunConfig& c, std::string_view v) { c.output_dir = std::string(v); },
            [](const RunConfig& c) { return c.output_dir; }, false},
      Field{"data_dir", [](RunConfig& c, std::string_view v) { c.data_dir = std::string(v); },
            [](const RunConfig& c) { return c.data_dir; }, false},
      SMA_SIZE(train_size),
      SMA_SIZE(val_size),
      SMA_SIZE(num_subjects),
      SMA_BOOL(augment),
      Field{"stage_widths", [](RunConfig& c, std::string_view v) { c.stage_widths = to_size_list("stage_widths", v); },
            [](const RunConfig& c) { return fmt_size_list(c.stage_widths); }},
      SMA_SIZE(input_size),
      SMA_ENUM(placement, kPlacements),
      SMA_SIZE(n_channels),
      SMA_SIZE(attn_kernel),
      SMA_SIZE(mapping_kernel),
      SMA_DOUBLE(delta),
      SMA_ENUM(combine_on, kCombine),
      SMA_DOUBLE(alpha),
      SMA_DOUBLE(lambda),
      SMA_DOUBLE(momentum),
      SMA_DOUBLE(weight_decay),
      SMA_DOUBLE(threshold),
      SMA_DOUBLE(resample_threshold),
      SMA_SIZE(max_duplication),
      SMA_BOOL(detach_ldiv),
  };
  return table;
}

#undef SMA_SIZE
#undef SMA_DOUBLE
#undef SMA_BOOL
#undef SMA_ENUM

}  // namespace

std::string ablation_name(Ablation a) { return enum_to(a, kAblations); }
Ablation parse_ablation(std::string_view name) { return enum_from("ablation", name, kAblations); }

const std::vector<Ablation>& all_ablations() {
  static const std::vector<Ablation> all = [] {
    std::vector<Ablation> v;
    for (const auto& e : kAblations) v.push_back(e.value);
    return v;
  }();
  return all;
}

void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value) {
  key = trim(key);
  value = trim(value);
  for (const auto& f : fields()) {
    if (key == f.key) {
      f.set(cfg, value);
      return;
    }
  }
  throw ConfigError("config: unknown key '" + std::string(key) + "'");
}

RunConfig parse_config(std::string_view text) {
  RunConfig cfg;
  std::set<std::string, std::less<>> seen;
  bool have_schema = false;
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config: line " + std::to_string(lineno) + " is not 'key = value'");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (!seen.insert(std::string(key)).second) throw ConfigError("config: duplicate key '" + std::string(key) + "'");
    if (key == "schema_version") {
      if (to_size(key, value) != static_cast<std::size_t>(kSchemaVersion)) {
        throw ConfigError("config: unsupported schema_version " + std::string(value) + " (expected " +
                          std::to_string(kSchemaVersion) + ")");
      }
      have_schema = true;
      continue;
    }
    set_config_value(cfg, key, value);
  }
  if (!have_schema) throw ConfigError("config: missing schema_version");
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const DataError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return parse_config(text);
}

std::string RunConfig::to_text() const {
  std::string out = "schema_version = " + std::to_string(kSchemaVersion) + "\n";
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(*this) + "\n";
  return out;
}

std::uint64_t RunConfig::digest() const {
  std::string text;
  for (const auto& f : fields()) {
    if (f.in_digest) text += std::string(f.key) + "=" + f.get(*this) + "\n";
  }
  return fnv1a(text);
}

void RunConfig::validate() const {
  if (epochs == 0) throw ConfigError("config: epochs must be >= 1");
  if (batch_size < 2) throw ConfigError("config: batch_size must be >= 2 (batch norm statistics)");
  if (eval_batch_size == 0) throw ConfigError("config: eval_batch_size must be >= 1");
  if (train_size < batch_size) throw ConfigError("config: train_size must be >= batch_size");
  if (val_size == 0) throw ConfigError("config: val_size must be >= 1");
  if (!stage_widths.empty() && stage_widths.size() != 4) throw ConfigError("config: stage_widths needs 4 entries");
  if (!(alpha >= 0.0) || !(lambda >= 0.0)) throw ConfigError("config: alpha and lambda must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("config: momentum must lie in [0,1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("config: weight_decay must be >= 0");
  resample().validate();
  synth().validate();
  backbone().validate();
}

bool RunConfig::uses_ldiv() const { return ablation == Ablation::kFull || ablation == Ablation::kF2aAaaLdiv; }
bool RunConfig::uses_lma() const { return ablation == Ablation::kFull || ablation == Ablation::kF2aAaaLma; }

std::size_t RunConfig::num_outputs() const { return task == Task::kMultiLabel ? kSynthLabels : synth().num_classes; }

BackboneConfig RunConfig::backbone() const {
  BackboneConfig b = profile == Profile::kToy ? BackboneConfig::toy() : BackboneConfig::resnet18();
  if (!stage_widths.empty()) std::copy(stage_widths.begin(), stage_widths.end(), b.stage_widths.begin());
  if (input_size != 0) b.input_size = input_size;
  b.task = task;
  b.num_outputs = num_outputs();
  b.placement = placement;
  b.sma.n_channels = n_channels;
  b.sma.attn_kernel = attn_kernel;
  b.sma.mapping_kernel = mapping_kernel;
  b.sma.delta = delta;
  b.sma.combine_on = combine_on;
  b.sma.mapping = ChannelMapping::kConv;
  b.sma.weighting = ChannelWeighting::kAaa;
  b.sma.spatial_attention = true;
  switch (ablation) {
    case Ablation::kBaseline:
      b.placement = SmaPlacement::kNone;
      break;
    case Ablation::kMultiChannel:
      b.sma.mapping = ChannelMapping::kChannelMean;
      b.sma.weighting = ChannelWeighting::kUniform;
      break;
    case Ablation::kF2a:
      b.sma.weighting = ChannelWeighting::kUniform;
      break;
    case Ablation::kAaa:
      b.sma.spatial_attention = false;
      break;
    case Ablation::kMultiChannelAaa:
      b.sma.mapping = ChannelMapping::kChannelMean;
      break;
    case Ablation::kF2aAaa:
    case Ablation::kF2aAaaLma:
    case Ablation::kF2aAaaLdiv:
    case Ablation::kFull:
      break;
  }
  b.bypass_heads = uses_lma() && b.placement != SmaPlacement::kNone;
  return b;
}

LossConfig RunConfig::loss() const {
  LossConfig l;
  l.alpha = uses_ldiv() ? alpha : 0.0;
  l.lambda = uses_lma() ? lambda : 0.0;
  l.delta = delta;
  l.task = task;
  return l;
}

SynthConfig RunConfig::synth() const {
  SynthConfig s;
  s.task = task;
  s.image_size = input_size != 0 ? input_size : (profile == Profile::kToy ? 64 : 256);
  s.num_subjects = num_subjects;
  return s;
}

ResampleConfig RunConfig::resample() const {
  ResampleConfig r;
  r.threshold = task == Task::kMultiLabel ? resample_threshold : 0.0;
  r.max_duplication = max_duplication;
  return r;
}

}  // namespace sma
