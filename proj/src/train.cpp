#include "sma/train.hpp"

#include <cmath>
#include <cstdio>

namespace sma {

Objective compute_objective(const ModelOutput& out, const Targets& targets, const LossConfig& cfg,
                            bool detach_ldiv) {
  Objective obj;
  obj.classification = task_loss(out.logits, targets, cfg);
  Tensor div_sum, ma_sum;
  std::size_t div_blocks = 0, ma_blocks = 0;
  for (const auto& block : out.sma_blocks) {
    Tensor d;
    if (detach_ldiv) {
      NoGradGuard no_grad;
      d = diversity_loss(block.output.stack.masks, cfg.delta);
    } else {
      d = diversity_loss(block.output.stack.masks, cfg.delta);
    }
    div_sum = div_sum.defined() ? add(div_sum, d) : d;
    ++div_blocks;
    if (block.heads != nullptr && cfg.lambda > 0.0) {
      const Tensor m = multi_attention_loss(block.output.stack, block.input, targets, *block.heads, cfg);
      ma_sum = ma_sum.defined() ? add(ma_sum, m) : m;
      ++ma_blocks;
    }
  }
  obj.diversity = div_blocks ? scale(div_sum, 1.0 / static_cast<double>(div_blocks)) : Tensor::scalar(0.0);
  obj.multi_attention = ma_blocks ? scale(ma_sum, 1.0 / static_cast<double>(ma_blocks)) : Tensor::scalar(0.0);
  obj.total = total_loss(obj.classification, obj.diversity, obj.multi_attention, cfg);
  return obj;
}

std::string EvalResult::report() const {
  if (task == Task::kMultiLabel) return format_f1_csv(f1);
  char buf[64];
  std::snprintf(buf, sizeof buf, "accuracy,%.6f\n", accuracy);
  return buf + format_confusion(confusion);
}

EvalResult evaluate(Backbone& model, const std::vector<Sample>& data, const RunConfig& cfg,
                    const std::vector<std::size_t>& indices) {
  std::vector<std::size_t> order = indices;
  if (order.empty()) {
    order.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) order[i] = i;
  }
  EvalResult r;
  r.task = cfg.task;
  r.counts = LabelCounts(cfg.num_outputs());
  std::vector<std::size_t> preds, truth;
  NoGradGuard no_grad;
  for (std::size_t start = 0; start < order.size(); start += cfg.eval_batch_size) {
    const std::size_t end = std::min(order.size(), start + cfg.eval_batch_size);
    std::span<const std::size_t> idx(order.data() + start, end - start);
    const Tensor logits = model.forward(batch_images(data, idx), false).logits;
    if (cfg.task == Task::kMultiLabel) {
      std::vector<std::uint8_t> y;
      for (auto i : idx) y.insert(y.end(), data[i].labels.begin(), data[i].labels.end());
      r.counts.add(binarize(logits.data(), cfg.threshold), y);
    } else {
      for (auto p : argmax_rows(logits)) preds.push_back(p);
      for (auto i : idx) truth.push_back(data[i].class_id);
    }
  }
  if (cfg.task == Task::kMultiLabel) {
    r.f1 = f1_scores(r.counts);
  } else {
    r.confusion = confusion_matrix(preds, truth, cfg.num_outputs());
    r.accuracy = accuracy(r.confusion);
  }
  return r;
}

std::string format_epoch_row(const EpochLog& row) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.6g,%.9f,%.9f,%.9f,%.9f,%.6f,%.6f", row.epoch, row.lr, row.l_cla, row.l_div,
                row.l_ma, row.l_all, row.train_metric, row.val_metric);
  return buf;
}

TrainResult train_model(const RunConfig& cfg, const std::vector<Sample>& train, const std::vector<Sample>& val,
                        std::ostream* progress) {
  cfg.validate();
  Backbone model(cfg.backbone(), cfg.seed);
  LossConfig loss_cfg = cfg.loss();

  std::vector<std::size_t> pool;
  if (cfg.task == Task::kMultiLabel) {
    pool = oversample_indices(train, cfg.resample());
    std::vector<std::size_t> positives(kSynthLabels, 0);
    for (auto i : pool) {
      for (std::size_t l = 0; l < positives.size(); ++l) positives[l] += train[i].labels.at(l);
    }
    loss_cfg.pos_weights = positive_class_weights(positives, pool.size());
  } else {
    pool.resize(train.size());
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
  }
  loss_cfg.validate(cfg.num_outputs());

  Sgd sgd({.lr = 0.0, .momentum = cfg.momentum, .weight_decay = cfg.weight_decay});
  TrainResult result;
  const std::size_t steps = pool.size() / cfg.batch_size;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    sgd.set_lr(lr_schedule(epoch, cfg.schedule()));
    std::vector<std::size_t> order = pool;
    Rng shuffle_rng(derive_seed(cfg.seed, "shuffle", epoch));
    shuffle_rng.shuffle(order);
    Rng augment_rng(derive_seed(cfg.seed, "augment", epoch));

    EpochLog row;
    row.epoch = epoch;
    row.lr = sgd.lr();
    LabelCounts train_counts(cfg.num_outputs());
    std::size_t correct = 0, seen = 0;
    for (std::size_t step = 0; step < steps; ++step) {
      std::vector<Sample> batch;
      batch.reserve(cfg.batch_size);
      for (std::size_t j = 0; j < cfg.batch_size; ++j) {
        const Sample& s = train[order[step * cfg.batch_size + j]];
        if (cfg.augment) {
          Sample a = s;
          a.image = apply_augment(s.image, draw_augment(augment_rng, cfg.augment_mode()));
          batch.push_back(std::move(a));
        } else {
          batch.push_back(s);
        }
      }
      std::vector<std::size_t> idx(batch.size());
      for (std::size_t j = 0; j < idx.size(); ++j) idx[j] = j;
      const Targets targets = batch_targets(batch, idx, cfg.task);
      const ModelOutput out = model.forward(batch_images(batch, idx), true);
      const Objective obj = compute_objective(out, targets, loss_cfg, cfg.detach_ldiv);
      if (!std::isfinite(obj.total.item())) {
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + " step " +
                           std::to_string(step) + " (l_cla " + std::to_string(obj.classification.item()) +
                           ", l_div " + std::to_string(obj.diversity.item()) + ", l_ma " +
                           std::to_string(obj.multi_attention.item()) + ")");
      }
      backward(obj.total);
      sgd.step(model.params());
      model.params().zero_grad();

      row.l_cla += obj.classification.item();
      row.l_div += obj.diversity.item();
      row.l_ma += obj.multi_attention.item();
      row.l_all += obj.total.item();
      if (cfg.task == Task::kMultiLabel) {
        std::vector<std::uint8_t> y;
        for (const auto& s : batch) y.insert(y.end(), s.labels.begin(), s.labels.end());
        train_counts.add(binarize(out.logits.data(), cfg.threshold), y);
      } else {
        const auto p = argmax_rows(out.logits);
        for (std::size_t j = 0; j < p.size(); ++j) correct += p[j] == batch[j].class_id;
        seen += p.size();
      }
    }
    const double n = static_cast<double>(std::max<std::size_t>(steps, 1));
    row.l_cla /= n;
    row.l_div /= n;
    row.l_ma /= n;
    row.l_all /= n;
    row.train_metric = cfg.task == Task::kMultiLabel
                           ? f1_scores(train_counts).macro_f1
                           : (seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0);
    row.val_metric = evaluate(model, val, cfg).metric();
    if (row.val_metric > result.best_val_metric) {
      result.best_val_metric = row.val_metric;
      result.best_epoch = epoch;
      result.best = snapshot(model.params(), cfg.digest());
    }
    result.epochs.push_back(row);
    if (progress) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "epoch %zu/%zu  loss %.4f  train %.4f  val %.4f\n", epoch + 1, cfg.epochs,
                    row.l_all, row.train_metric, row.val_metric);
      *progress << buf << std::flush;
    }
  }
  return result;
}

std::pair<std::vector<Sample>, std::vector<Sample>> load_or_synthesize(const RunConfig& cfg) {
  if (!cfg.data_dir.empty()) {
    const std::filesystem::path dir(cfg.data_dir);
    return {read_dataset(dir / "train", cfg.task), read_dataset(dir / "val", cfg.task)};
  }
  const SynthConfig synth = cfg.synth();
  return {generate_synthetic(derive_seed(cfg.seed, "data", 0), cfg.train_size, synth),
          generate_synthetic(derive_seed(cfg.seed, "data", 1), cfg.val_size, synth)};
}

}  // namespace sma
