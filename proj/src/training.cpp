#include "ddsd/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "json.hpp"

#include "ddsd/errors.hpp"
#include "ddsd/rng.hpp"

namespace ddsd {

using num::Matrix;
using num::Parameter;
using num::Tape;

std::string_view phase_name(Phase p) {
  switch (p) {
    case Phase::Scratch:
      return "scratch";
    case Phase::Pretrain:
      return "pretrain";
    case Phase::Finetune:
      return "finetune";
  }
  return "unknown";
}

Decay parse_decay(std::string_view s) {
  if (s == "linear") return Decay::Linear;
  if (s == "exponential") return Decay::Exponential;
  throw ConfigError("unknown decay '" + std::string(s) + "' (expected linear or exponential)");
}

void TrainConfig::validate() const {
  if (!(lr_min >= 0.0) || !(lr_max >= lr_min) || !std::isfinite(lr_max)) {
    throw ConfigError("learning rates must satisfy 0 <= lr_min <= lr_max");
  }
  if (decay == Decay::Exponential && lr_min <= 0.0) {
    throw ConfigError("exponential decay needs lr_min > 0");
  }
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (clip_norm && !(*clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
}

double learning_rate(const TrainConfig& cfg, std::size_t step, std::size_t total) {
  if (total <= 1) return cfg.lr_max;
  const double frac = static_cast<double>(std::min(step, total - 1)) / static_cast<double>(total - 1);
  double lr = cfg.decay == Decay::Linear
                  ? cfg.lr_max + (cfg.lr_min - cfg.lr_max) * frac
                  : cfg.lr_max * std::pow(cfg.lr_min / cfg.lr_max, frac);
  if (step + 1 >= total) lr = cfg.lr_min;
  return std::clamp(lr, cfg.lr_min, cfg.lr_max);
}

void write_report(std::ostream& out, const TrainReport& report) {
  for (const auto& e : report.history) {
    nlohmann::ordered_json j;
    j["epoch"] = e.epoch;
    j["train_loss"] = e.train_loss;
    j["dev_loss"] = e.dev_loss;
    j["dev_eer"] = e.dev_eer;
    out << j.dump() << '\n';
  }
}

namespace {

struct Prepared {
  std::vector<FeatureSequence> features;
  std::vector<double> labels;
  std::vector<Label> gold;
  std::vector<std::string> ids;
};

Prepared prepare(const Classifier& model, std::span<const Utterance> data, const EmbeddingStore& store,
                 const char* what) {
  Prepared p;
  p.features.reserve(data.size());
  for (const Utterance& u : data) {
    if (!u.label) throw ContractError(std::string(what) + " item '" + u.id + "' has no label");
    p.features.push_back(model.features(u, store));
    p.labels.push_back(label_value(*u.label));
    p.gold.push_back(*u.label);
    p.ids.push_back(u.id);
  }
  return p;
}

Evaluation evaluate_prepared(const Classifier& model, const Prepared& p) {
  Evaluation ev;
  const auto scores = model.score(p.features);
  ev.items.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) ev.items.push_back({scores[i], p.gold[i], p.ids[i]});
  ev.report = compute_eer(ev.items);
  return ev;
}

// Forward, backward, clip, update. Returns the batch loss.
double sgd_step(Classifier& model, const Prepared& data, std::span<const std::size_t> idx, double lr,
                std::optional<double> clip_norm, const TrainHooks* hooks, std::vector<std::string>& ids) {
  std::vector<const FeatureSequence*> seqs;
  std::vector<double> labels;
  seqs.reserve(idx.size());
  labels.reserve(idx.size());
  ids.clear();
  for (std::size_t i : idx) {
    seqs.push_back(&data.features[i]);
    labels.push_back(data.labels[i]);
    ids.push_back(data.ids[i]);
  }
  if (hooks && hooks->on_batch) hooks->on_batch(ids);
  const Batch batch = model.batch(seqs, labels);
  Tape tape;
  const auto fwd = model.forward(tape, batch);
  const num::Var loss = num::bce_with_logits(fwd.logits, batch.labels);
  const double value = loss.value()(0, 0);
  if (!std::isfinite(value)) return value;
  tape.backward(loss);

  const auto params = model.parameters();
  double norm_sq = 0.0;
  // A parameter the batch never touched (a special token that did not occur)
  // is not on the tape and has zero gradient.
  for (const Parameter* p : params) {
    if (tape.is_bound(*p)) norm_sq += num::frobenius_sq(tape.gradient(*p));
  }
  if (!std::isfinite(norm_sq)) return std::numeric_limits<double>::quiet_NaN();
  if (lr == 0.0) return value;
  double factor = lr;
  if (clip_norm) {
    const double norm = std::sqrt(norm_sq);
    if (norm > *clip_norm) factor *= *clip_norm / norm;
  }
  for (Parameter* p : params) {
    if (!tape.is_bound(*p)) continue;
    const Matrix& g = tape.gradient(*p);
    auto v = p->value.values();
    const auto gv = g.values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= factor * gv[i];
  }
  return value;
}

std::vector<Matrix> snapshot(const Classifier& model) {
  std::vector<Matrix> out;
  for (const Parameter* p : model.parameters()) out.push_back(p->value);
  return out;
}

void restore(Classifier& model, const std::vector<Matrix>& values) {
  auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

}  // namespace

Evaluation evaluate(const Classifier& model, std::span<const Utterance> data,
                    const EmbeddingStore& store) {
  return evaluate_prepared(model, prepare(model, data, store, "evaluation"));
}

TrainReport train(Classifier& model, std::span<const Utterance> train_set,
                  std::span<const Utterance> dev_set, const EmbeddingStore& store,
                  const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  const auto started = std::chrono::steady_clock::now();
  TrainReport report;
  report.phase = cfg.phase;
  if (train_set.empty()) throw ContractError("empty training set");
  if (dev_set.empty()) throw ContractError("empty dev set");
  {
    std::unordered_set<std::string> ids;
    for (const auto& u : train_set) ids.insert(u.id);
    for (const auto& u : dev_set) {
      if (ids.contains(u.id)) throw IntegrityError("id '" + u.id + "' is in both train and dev");
    }
  }
  if (cfg.epochs == 0) return report;

  const Prepared tr = prepare(model, train_set, store, "training");
  const Prepared dv = prepare(model, dev_set, store, "dev");

  const std::size_t n = tr.features.size();
  const std::size_t per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = per_epoch * cfg.epochs;
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<std::string> batch_ids;
  std::vector<Matrix> best;
  double best_loss = INFINITY;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size, ++step) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const double lr = learning_rate(cfg, step, total);
      const double loss = sgd_step(model, tr, idx, lr, cfg.clip_norm, &hooks, batch_ids);
      if (!std::isfinite(loss)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                            std::to_string(step) + " (lr " + std::to_string(lr) + ")");
      }
      loss_sum += loss * static_cast<double>(idx.size());
    }
    const Evaluation ev = evaluate_prepared(model, dv);
    report.history.push_back({epoch, loss_sum / static_cast<double>(n), ev.report.mean_loss, ev.report.eer});
    if (hooks.on_epoch) hooks.on_epoch(report.history.back());
    if (ev.report.mean_loss < best_loss) {
      best_loss = ev.report.mean_loss;
      report.best_epoch = epoch;
      best = snapshot(model);
    }
  }
  if (!best.empty()) restore(model, best);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

LrRangeResult lr_range_test(const ModelFactory& factory, std::span<const Utterance> data,
                            const EmbeddingStore& store, double lr_lo, double lr_hi,
                            std::size_t steps, std::size_t batch_size, std::uint64_t seed) {
  if (!(lr_lo > 0.0) || !(lr_lo < lr_hi)) throw ContractError("lr range needs 0 < lr_lo < lr_hi");
  if (steps < 50) throw ContractError("lr range test needs at least 50 steps");
  if (batch_size == 0) throw ContractError("batch_size must be positive");
  if (data.empty()) throw ContractError("empty data");

  Classifier model = factory();
  const Prepared tr = prepare(model, data, store, "lr-range");
  Rng rng(seed);
  std::vector<std::size_t> order(tr.features.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);

  constexpr double kBeta = 0.98;
  LrRangeResult result;
  double avg = 0.0;
  double best = INFINITY;
  std::size_t best_step = 0;
  std::size_t cursor = 0;
  std::vector<std::string> ids;
  std::vector<std::size_t> idx;
  for (std::size_t k = 0; k < steps; ++k) {
    const double lr =
        lr_lo * std::pow(lr_hi / lr_lo, static_cast<double>(k) / static_cast<double>(steps - 1));
    idx.clear();
    for (std::size_t b = 0; b < batch_size && b < order.size(); ++b) {
      if (cursor == order.size()) {
        cursor = 0;
        std::shuffle(order.begin(), order.end(), rng);
      }
      idx.push_back(order[cursor++]);
    }
    const double loss = sgd_step(model, tr, idx, lr, std::nullopt, nullptr, ids);
    if (!std::isfinite(loss)) {
      if (k <= 1) throw RangeError("loss diverged at step " + std::to_string(k) + "; lr_lo is too high");
      result.stopped_early = true;
      break;
    }
    avg = kBeta * avg + (1.0 - kBeta) * loss;
    const double smoothed = avg / (1.0 - std::pow(kBeta, static_cast<double>(k + 1)));
    result.curve.push_back({lr, loss, smoothed});
    if (smoothed < best) {
      best = smoothed;
      best_step = k;
    }
    if (k > 0 && smoothed > 4.0 * best) {
      if (k == 1) throw RangeError("loss diverged after the first step; lr_lo is too high");
      result.stopped_early = true;
      break;
    }
  }
  result.suggested_lr_max = result.curve[best_step].lr / 10.0;
  result.suggested_lr_min = result.suggested_lr_max / 100.0;
  return result;
}

TransferResult transfer_train(const ModelFactory& factory, std::span<const Utterance> pre_train,
                              std::span<const Utterance> pre_dev, std::span<const Utterance> ft_train,
                              std::span<const Utterance> ft_dev, const EmbeddingStore& store,
                              TrainConfig cfg_pre, TrainConfig cfg_ft, const TrainHooks& hooks) {
  if (cfg_pre.lr_max < cfg_ft.lr_max) {
    throw ConfigError("pretraining lr_max must be >= fine-tuning lr_max");
  }
  cfg_pre.phase = Phase::Pretrain;
  cfg_ft.phase = Phase::Finetune;
  Classifier model = factory();
  TrainReport pre;
  try {
    pre = train(model, pre_train, pre_dev, store, cfg_pre, hooks);
  } catch (const TrainingError& e) {
    throw TrainingError(std::string("[pretrain] ") + e.what());
  }
  TrainReport ft;
  try {
    ft = train(model, ft_train, ft_dev, store, cfg_ft, hooks);
  } catch (const TrainingError& e) {
    throw TrainingError(std::string("[finetune] ") + e.what());
  }
  return TransferResult{std::move(model), std::move(pre), std::move(ft)};
}

}  // namespace ddsd
