#include "sma/commands.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "sma/checkpoint.hpp"
#include "sma/ops.hpp"
#include "sma/train.hpp"

namespace sma {

namespace fs = std::filesystem;

namespace {

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

}  // namespace

int cmd_synth(const RunConfig& cfg, std::ostream& out) {
  cfg.validate();
  const RunConfig synth_cfg = [&] {
    RunConfig c = cfg;
    c.data_dir.clear();
    return c;
  }();
  auto [train, val] = load_or_synthesize(synth_cfg);
  const fs::path root = fs::path(cfg.output_dir) / "data";
  write_dataset(root / "train", train, cfg.task);
  write_dataset(root / "val", val, cfg.task);
  out << "wrote " << train.size() << " training and " << val.size() << " validation samples to " << root.string()
      << "\n";
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  cfg.validate();
  auto [train, val] = load_or_synthesize(cfg);
  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);
  write_file(dir / "config.txt", cfg.to_text());
  const TrainResult result = train_model(cfg, train, val, &out);

  std::string csv = std::string(kMetricsCsvHeader) + "\n";
  for (const auto& row : result.epochs) csv += format_epoch_row(row) + "\n";
  write_file(dir / "metrics.csv", csv);
  write_file(dir / "best.ckpt", encode_checkpoint(result.best));

  Backbone model(cfg.backbone(), cfg.seed);
  restore(model.params(), result.best, cfg.digest());
  write_file(dir / "val_report.csv", evaluate(model, val, cfg).report());
  out << "best validation " << (cfg.task == Task::kMultiLabel ? "macro-F1 " : "accuracy ")
      << fmt("%.6f", result.best_val_metric) << " at epoch " << result.best_epoch << "\n";
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg, const fs::path& checkpoint, std::size_t folds, std::ostream& out) {
  cfg.validate();
  Backbone model(cfg.backbone(), cfg.seed);
  restore(model.params(), load_checkpoint(checkpoint), cfg.digest());
  auto data = load_or_synthesize(cfg).second;
  if (folds < 2) {
    out << evaluate(model, data, cfg).report();
    return kExitOk;
  }
  const auto parts = make_folds(data, folds, true, cfg.seed);
  out << "fold,samples," << (cfg.task == Task::kMultiLabel ? "macro_f1" : "accuracy") << "\n";
  double total = 0.0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const double m = evaluate(model, data, cfg, parts[k]).metric();
    total += m;
    out << k << "," << parts[k].size() << "," << fmt("%.6f", m) << "\n";
  }
  out << "mean," << data.size() << "," << fmt("%.6f", total / static_cast<double>(parts.size())) << "\n";
  return kExitOk;
}

int cmd_sweep_n(const RunConfig& cfg, const std::vector<std::size_t>& n_values, std::ostream& out) {
  if (n_values.empty()) throw ConfigError("sweep-n: no channel counts given");
  cfg.validate();
  auto [train, val] = load_or_synthesize(cfg);
  std::string table = std::string("n,") + (cfg.task == Task::kMultiLabel ? "macro_f1" : "accuracy") + "\n";
  for (auto n : n_values) {
    RunConfig c = cfg;
    c.n_channels = n;
    c.validate();
    out << "N = " << n << "\n";
    const TrainResult r = train_model(c, train, val, &out);
    table += std::to_string(n) + "," + fmt("%.6f", r.best_val_metric) + "\n";
  }
  const fs::path dir(cfg.output_dir);
  write_file(dir / "sweep_n.csv", table);
  out << table;
  return kExitOk;
}

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v), true);
}

// Values with magnitude in [0.2, 1] so kinks at zero are never straddled.
Tensor away_from_zero(Rng& rng, Shape shape) {
  Tensor t = random_tensor(rng, std::move(shape), 0.2, 1.0);
  for (auto& v : t.mutable_data()) v = rng.bernoulli(0.5) ? v : -v;
  return t;
}

// Distinct values on a coarse grid, so maxima never tie under perturbation.
Tensor distinct_values(Rng& rng, Shape shape) {
  const std::size_t n = numel(shape);
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = 0.1 * static_cast<double>(i) - 0.05 * static_cast<double>(n);
  rng.shuffle(v);
  return Tensor::from(std::move(shape), std::move(v), true);
}

// Mask values in (0,1) at least 0.01 from delta; every max-of-others is one of them.
Tensor masks_off_kink(Rng& rng, Shape shape, double delta) {
  Tensor t = random_tensor(rng, std::move(shape), 0.02, 0.98);
  for (auto& v : t.mutable_data()) {
    while (std::abs(v - delta) < 0.01) v = rng.uniform(0.02, 0.98);
  }
  return t;
}

// Weighted sum with fixed random coefficients, so every output coordinate
// reaches the gradient.
Tensor probe(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> w(y.numel());
  for (auto& v : w) v = rng.uniform(-1.0, 1.0);
  return sum(mul(y, Tensor::from(y.shape(), std::move(w))));
}

GradCheckItem item(std::string name, std::vector<std::string> covers, std::function<Tensor()> f,
                   std::vector<Tensor> leaves, GradCheckOptions opt = {}) {
  return {std::move(name), std::move(covers), [f = std::move(f), leaves = std::move(leaves), opt] {
            return grad_check(f, leaves, opt);
          }};
}

SmaConfig small_sma(std::size_t c, std::size_t n) {
  SmaConfig cfg;
  cfg.in_channels = c;
  cfg.n_channels = n;
  cfg.attn_kernel = 3;
  return cfg;
}

}  // namespace

const std::vector<std::string>& primitive_ops() {
  static const std::vector<std::string> ops = {
      "conv2d",  "max_pool2d", "sigmoid", "relu",      "exp",         "log",          "softmax",
      "linear",  "add",        "sub",     "mul",       "scale",       "add_scalar",   "hinge_sub",
      "elementwise", "sum",    "mean",    "sum_axes",  "avg_pool",    "max_over_axis", "max_over_others",
      "masked_avg_pool", "reshape", "flatten", "concat", "stack",     "slice",        "batch_norm2d",
  };
  return ops;
}

std::vector<GradCheckItem> gradcheck_registry(const RunConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, "gradcheck"));
  std::vector<GradCheckItem> items;
  std::uint64_t probe_seed = derive_seed(cfg.seed, "probe");
  auto next_probe = [&] { return ++probe_seed; };

  {
    Tensor x = random_tensor(rng, {2, 3, 5, 5}), w = random_tensor(rng, {4, 3, 3, 3}), b = random_tensor(rng, {4});
    const auto ps = next_probe();
    items.push_back(item("conv2d", {"conv2d"},
                         [=] { return probe(conv2d(x, w, b, {.stride = 2, .padding = 1, .groups = 1}), ps); },
                         {x, w, b}));
  }
  {
    Tensor x = random_tensor(rng, {2, 4, 5, 5}), w = random_tensor(rng, {4, 1, 3, 3}), b = random_tensor(rng, {4});
    const auto ps = next_probe();
    items.push_back(item("conv2d_grouped", {"conv2d"},
                         [=] { return probe(conv2d(x, w, b, {.stride = 1, .padding = 1, .groups = 4}), ps); },
                         {x, w, b}));
  }
  {
    Tensor x = distinct_values(rng, {1, 2, 6, 6});
    const auto ps = next_probe();
    items.push_back(item("max_pool2d", {"max_pool2d"}, [=] { return probe(max_pool2d(x, 3, 2, 1), ps); }, {x}));
  }
  {
    Tensor x = random_tensor(rng, {3, 4}, -3.0, 3.0);
    const auto ps = next_probe();
    items.push_back(item("sigmoid", {"sigmoid"}, [=] { return probe(sigmoid(x), ps); }, {x}));
  }
  {
    Tensor x = away_from_zero(rng, {3, 4});
    const auto ps = next_probe();
    items.push_back(item("relu", {"relu"}, [=] { return probe(relu(x), ps); }, {x}));
  }
  {
    Tensor x = random_tensor(rng, {3, 4});
    const auto ps = next_probe();
    items.push_back(item("exp", {"exp"}, [=] { return probe(exp(x), ps); }, {x}));
  }
  {
    Tensor x = random_tensor(rng, {3, 4}, 0.5, 2.0);
    const auto ps = next_probe();
    items.push_back(item("log", {"log"}, [=] { return probe(log(x), ps); }, {x}));
  }
  {
    Tensor x = random_tensor(rng, {3, 4, 2}, -2.0, 2.0);
    const auto p1 = next_probe(), p2 = next_probe();
    items.push_back(item("softmax", {"softmax"},
                         [=] { return add(probe(softmax(x, 1), p1), probe(softmax(x, 2), p2)); }, {x}));
  }
  {
    Tensor x = random_tensor(rng, {3, 4}), w = random_tensor(rng, {5, 4}), b = random_tensor(rng, {5});
    const auto ps = next_probe();
    items.push_back(item("linear", {"linear"}, [=] { return probe(linear(x, w, b), ps); }, {x, w, b}));
  }
  {
    Tensor a = random_tensor(rng, {2, 3, 4}), b = random_tensor(rng, {3, 1});
    const auto p1 = next_probe(), p2 = next_probe(), p3 = next_probe();
    items.push_back(item("broadcast_binary", {"add", "sub", "mul"},
                         [=] {
                           return add(add(probe(add(a, b), p1), probe(sub(b, a), p2)), probe(mul(a, b), p3));
                         },
                         {a, b}));
  }
  {
    Tensor x = random_tensor(rng, {2, 3});
    const auto ps = next_probe();
    items.push_back(item("scale_add_scalar", {"scale", "add_scalar"},
                         [=] { return probe(add_scalar(scale(x, -1.7), 0.3), ps); }, {x}));
  }
  {
    Tensor x = random_tensor(rng, {3, 4});
    for (auto& v : x.mutable_data()) v = 0.5 + (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.05, 0.5);
    Tensor a = random_tensor(rng, {3, 4}), b = random_tensor(rng, {4});
    const auto p1 = next_probe(), p2 = next_probe(), p3 = next_probe();
    items.push_back(item("elementwise", {"hinge_sub", "elementwise"},
                         [=] {
                           return add(add(probe(hinge_sub(x, 0.5), p1),
                                          probe(elementwise(a, b, ElementwiseKind::kMul), p2)),
                                      probe(elementwise(a, b, ElementwiseKind::kAdd), p3));
                         },
                         {x, a, b}));
  }
  {
    Tensor x = random_tensor(rng, {2, 3, 4});
    const auto p1 = next_probe(), p2 = next_probe();
    items.push_back(item("reductions", {"sum", "mean", "sum_axes", "avg_pool"},
                         [=] {
                           return add(add(scale(sum(x), 0.3), mean(x)),
                                      add(probe(sum_axes(x, {0, 2}), p1), probe(avg_pool(x, {1}), p2)));
                         },
                         {x}));
  }
  {
    Tensor x = distinct_values(rng, {2, 4, 3});
    const auto p1 = next_probe(), p2 = next_probe();
    items.push_back(item("maxima", {"max_over_axis", "max_over_others"},
                         [=] { return add(probe(max_over_axis(x, 1), p1), probe(max_over_others(x, 1), p2)); },
                         {x}));
  }
  {
    Tensor x = random_tensor(rng, {2, 3, 4, 4}), m = random_tensor(rng, {2, 5, 4, 4}, 0.05, 0.95);
    const auto ps = next_probe();
    items.push_back(item("masked_avg_pool", {"masked_avg_pool"}, [=] { return probe(masked_avg_pool(x, m), ps); },
                         {x, m}));
  }
  {
    Tensor a = random_tensor(rng, {2, 3}), b = random_tensor(rng, {2, 2});
    const auto p1 = next_probe(), p2 = next_probe(), p3 = next_probe();
    items.push_back(item("shape_ops", {"reshape", "flatten", "concat", "stack", "slice"},
                         [=] {
                           const Tensor c = concat({a, b}, 1);
                           return add(add(probe(reshape(c, {5, 2}), p1), probe(stack({a, a}, 0), p2)),
                                      add(probe(slice(flatten(c), 1, 1, 4), p3), sum(slice(c, 1, 1, 3))));
                         },
                         {a, b}));
  }
  {
    Tensor x = random_tensor(rng, {3, 2, 3, 3}), g = random_tensor(rng, {2}, 0.5, 1.5), b = random_tensor(rng, {2});
    const auto p1 = next_probe(), p2 = next_probe();
    items.push_back(item("batch_norm2d", {"batch_norm2d"},
                         [=] {
                           BatchNormState train_state{Tensor::zeros({2}), Tensor::full({2}, 1.0)};
                           BatchNormState eval_state{Tensor::from({2}, {0.1, -0.2}), Tensor::from({2}, {0.8, 1.3})};
                           return add(probe(batch_norm2d(x, g, b, train_state, true), p1),
                                      probe(batch_norm2d(x, g, b, eval_state, false), p2));
                         },
                         {x, g, b}));
  }

  // Attention block, one item per stage plus the composed block.
  {
    SmaConfig sc = small_sma(3, 4);
    SmaParams p = SmaParams::uniform(sc, rng, 0.5);
    Tensor x = random_tensor(rng, {2, 3, 5, 5});
    const auto p1 = next_probe(), p2 = next_probe();
    std::vector<Tensor> leaves{x};
    for (auto& [name, t] : p.named()) leaves.push_back(t);
    items.push_back(item("sma_f2a", {}, [=] {
      const AttentionStack s = f2a_forward(x, sc, p);
      return add(probe(s.masks, p1), probe(s.logits, p2));
    }, leaves));
    const auto p3 = next_probe();
    items.push_back(item("sma_aaa", {}, [=] { return probe(aaa_forward(x, p), p3); }, leaves));
    for (auto mode : {CombineOn::kLogits, CombineOn::kMasks, CombineOn::kAttendedFeatures}) {
      SmaConfig c = sc;
      c.combine_on = mode;
      const auto pc = next_probe();
      const char* name = mode == CombineOn::kLogits  ? "sma_combine_logits"
                         : mode == CombineOn::kMasks ? "sma_combine_masks"
                                                     : "sma_combine_attended";
      items.push_back(item(name, {}, [=] {
        const AttentionStack s = f2a_forward(x, c, p);
        return probe(combine(s, aaa_forward(x, p), c, x), pc);
      }, leaves));
    }
    Tensor a = random_tensor(rng, {2, 1, 5, 5}, 0.05, 0.95);
    const auto p4 = next_probe(), p5 = next_probe();
    items.push_back(item("sma_refine", {}, [=] { return probe(refine(a, x), p4); }, {a, x}));
    items.push_back(item("sma_block", {}, [=] { return probe(sma_block_forward(x, sc, p).refined, p5); }, leaves));
  }

  // Losses.
  {
    Tensor m = masks_off_kink(rng, {2, 3, 4, 4}, 0.5);
    items.push_back(item("diversity_loss", {}, [=] { return diversity_loss(m, 0.5); }, {m}));
    Tensor x = random_tensor(rng, {4, 5}, -3.0, 3.0);
    std::vector<double> y(20);
    for (auto& v : y) v = rng.bernoulli(0.4) ? 1.0 : 0.0;
    Tensor yt = Tensor::from({4, 5}, y);
    const std::vector<double> w{1.0, 2.5, 10.0, 1.3, 4.0};
    items.push_back(item("weighted_bce", {}, [=] { return weighted_bce_logits(x, yt, w); }, {x}));
    const std::vector<std::size_t> cls{0, 4, 2, 2};
    items.push_back(item("cross_entropy", {}, [=] { return cross_entropy(x, cls); }, {x}));
  }
  {
    SmaConfig sc = small_sma(3, 3);
    SmaParams p = SmaParams::uniform(sc, rng, 0.5);
    BypassHeads heads = BypassHeads::uniform(3, 3, 4, rng, 0.5);
    Tensor x = random_tensor(rng, {2, 3, 4, 4});
    Tensor fc_w = random_tensor(rng, {4, 3}), fc_b = random_tensor(rng, {4});
    LossConfig lc;
    lc.pos_weights = {1.0, 2.0, 3.0, 10.0};
    Targets t;
    t.labels = Tensor::from({2, 4}, {1, 0, 0, 1, 0, 1, 1, 0});
    std::vector<Tensor> leaves{x, fc_w, fc_b};
    for (auto& [name, tt] : p.named()) leaves.push_back(tt);
    for (auto& [name, tt] : heads.named()) leaves.push_back(tt);
    items.push_back(item("multi_attention_loss", {}, [=] {
      const AttentionStack s = f2a_forward(x, sc, p);
      return multi_attention_loss(s, x, t, heads, lc);
    }, leaves));
    items.push_back(item("total_objective", {}, [=] {
      const SmaOutput o = sma_block_forward(x, sc, p);
      const Tensor logits = linear(reshape(avg_pool(o.refined, {2, 3}), {2, 3}), fc_w, fc_b);
      const Tensor div = diversity_loss(o.stack.masks, lc.delta);
      const Tensor ma = multi_attention_loss(o.stack, x, t, heads, lc);
      return total_loss(task_loss(logits, t, lc), div, ma, lc);
    }, leaves));
  }

  // Full model on a small input, sampled coordinates per parameter tensor.
  {
    RunConfig small = cfg;
    small.input_size = 16;
    small.ablation = Ablation::kFull;
    small.task = Task::kMultiLabel;
    auto model = std::make_shared<Backbone>(small.backbone(), cfg.seed);
    LossConfig lc = small.loss();
    lc.pos_weights.assign(small.num_outputs(), 2.0);
    Tensor images = random_tensor(rng, {2, 3, 16, 16}, 0.0, 1.0);
    images.set_requires_grad(false);
    std::vector<double> y(2 * small.num_outputs());
    for (auto& v : y) v = rng.bernoulli(0.3) ? 1.0 : 0.0;
    Targets t;
    t.labels = Tensor::from({2, small.num_outputs()}, y);
    std::vector<Tensor> leaves;
    for (const auto& e : model->params().entries()) {
      if (e.trainable) leaves.push_back(e.tensor);
    }
    GradCheckOptions opt;
    opt.max_coords_per_input = 2;
    opt.seed = cfg.seed;
    items.push_back(item("full_model", {}, [=] {
      return compute_objective(model->forward(images, true), t, lc).total;
    }, leaves, opt));
  }
  return items;
}

int run_gradcheck(const std::vector<GradCheckItem>& items, std::ostream& out) {
  std::set<std::string> covered;
  bool ok = true;
  for (const auto& it : items) {
    const GradCheckResult r = it.run();
    const bool pass = r.max_rel_error < kGradCheckTolerance;
    ok = ok && pass;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-24s %.3e  %6zu coords  %s\n", it.name.c_str(), r.max_rel_error,
                  r.coords_checked, pass ? "ok" : "FAIL");
    out << buf;
    covered.insert(it.covers.begin(), it.covers.end());
  }
  for (const auto& op : primitive_ops()) {
    if (!covered.count(op)) {
      out << "not covered: " << op << "\n";
      ok = false;
    }
  }
  out << (ok ? "all gradients within " : "gradient check FAILED, tolerance ") << fmt("%.0e", kGradCheckTolerance)
      << "\n";
  return ok ? kExitOk : kExitThreshold;
}

int cmd_gradcheck(const RunConfig& cfg, std::ostream& out) {
  if (cfg.profile != Profile::kToy) throw ConfigError("gradcheck: requires profile = toy");
  return run_gradcheck(gradcheck_registry(cfg), out);
}

int cmd_params(const RunConfig& cfg, std::ostream& out) {
  cfg.validate();
  const BackboneConfig bc = cfg.backbone();
  Backbone model(bc, cfg.seed);
  BackboneConfig twin = bc;
  twin.placement = SmaPlacement::kNone;
  twin.bypass_heads = false;
  const std::size_t plain = plain_backbone_param_count(twin);
  const ParamStore& store = model.params();

  out << "module,params\n";
  out << "stem," << store.trainable_count_with_prefix("stem.") << "\n";
  for (std::size_t s = 0; s < 4; ++s) {
    for (std::size_t i = 0; i < bc.blocks_per_stage; ++i) {
      const std::string name = "stage" + std::to_string(s + 1) + ".block" + std::to_string(i);
      const std::size_t all = store.trainable_count_with_prefix(name + ".");
      const std::size_t sma = store.trainable_count_with_prefix(name + ".sma.");
      out << name << "," << all - sma << "\n";
      if (sma > 0) out << name << ".sma," << sma << "\n";
    }
  }
  out << "fc," << store.trainable_count_with_prefix("fc.") << "\n";
  const std::size_t total = model.param_count(true);
  const std::size_t no_heads = model.param_count(false);
  out << "total," << total << "\n";
  out << "total_without_heads," << no_heads << "\n";
  out << "placement_none_twin," << plain << "\n";
  out << "overhead_ratio," << fmt("%.6f", static_cast<double>(total) / static_cast<double>(plain)) << "\n";
  out << "overhead_ratio_without_heads," << fmt("%.6f", static_cast<double>(no_heads) / static_cast<double>(plain))
      << "\n";
  return kExitOk;
}

int cmd_export_attention(const RunConfig& cfg, const fs::path& checkpoint, const std::vector<fs::path>& images,
                         std::ostream& out) {
  cfg.validate();
  if (images.empty()) throw ConfigError("export-attention: no images given");
  Backbone model(cfg.backbone(), cfg.seed);
  restore(model.params(), load_checkpoint(checkpoint), cfg.digest());
  const std::size_t size = model.config().input_size;
  const fs::path root = fs::path(cfg.output_dir) / "attention";
  std::string weights;
  NoGradGuard no_grad;
  for (const auto& path : images) {
    Sample s;
    s.image = decode_image(read_file(path));
    if (s.image.channels != 3 || s.image.height != size || s.image.width != size) {
      throw DataError("export-attention: " + path.string() + " must be a " + std::to_string(size) + "x" +
                      std::to_string(size) + " P6 image");
    }
    const std::vector<Sample> batch{s};
    const std::size_t idx[] = {0};
    const ModelOutput o = model.forward(batch_images(batch, idx), false);
    const std::string stem = path.stem().string();
    for (const auto& block : o.sma_blocks) {
      const fs::path dir = root / stem / block.name;
      const Tensor& a = block.output.fused;
      const std::size_t h = a.dim(2), w = a.dim(3);
      write_file(dir / "A.pgm", encode_heatmap(a.data(), h, w));
      const Tensor& m = block.output.stack.masks;
      for (std::size_t n = 0; n < m.dim(1); ++n) {
        write_file(dir / ("m" + std::to_string(n) + ".pgm"), encode_heatmap(m.data().subspan(n * h * w, h * w), h, w));
      }
      weights += stem + " " + block.name;
      for (double t : block.output.channel_weights.data()) weights += " " + fmt("%.9f", t);
      weights += "\n";
    }
  }
  write_file(root / "weights.txt", weights);
  out << "wrote attention maps for " << images.size() << " image(s) to " << root.string() << "\n";
  return kExitOk;
}

int run_guarded(const std::function<int()>& body, std::ostream& err) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DimensionError& e) {
    err << "dimension error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  }
}

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

}  // namespace sma
