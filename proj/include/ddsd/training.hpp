#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ddsd/embeddings.hpp"
#include "ddsd/evaluation.hpp"
#include "ddsd/models.hpp"

namespace ddsd {

enum class Decay : std::uint8_t { Linear, Exponential };
enum class Phase : std::uint8_t { Scratch, Pretrain, Finetune };

std::string_view phase_name(Phase p);
Decay parse_decay(std::string_view s);

struct TrainConfig {
  double lr_max = 0.5;
  double lr_min = 0.005;
  Decay decay = Decay::Linear;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  std::optional<double> clip_norm = 5.0;
  Phase phase = Phase::Scratch;

  // 0 <= lr_min <= lr_max (lr_min > 0 for exponential decay). epochs == 0 is
  // accepted and trains nothing.
  void validate() const;
};

// Learning rate at `step` of `total` steps: lr_max at the first step, lr_min
// at the last.
double learning_rate(const TrainConfig& cfg, std::size_t step, std::size_t total);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double dev_loss = 0.0;
  double dev_eer = 0.0;
};

struct TrainReport {
  Phase phase = Phase::Scratch;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;  // index into history; meaningless when empty
  double wall_seconds = 0.0;
};

// One JSON object per line: {"epoch", "train_loss", "dev_loss", "dev_eer"}.
void write_report(std::ostream& out, const TrainReport& report);

struct TrainHooks {
  // Called with the ids of every minibatch before its gradient step.
  std::function<void(std::span<const std::string>)> on_batch;
  std::function<void(const EpochRecord&)> on_epoch;
};

// Minibatch SGD on mean binary cross-entropy with a decaying learning rate and
// optional global-norm clipping. Leaves `model` at its best-dev-loss epoch.
// Throws IntegrityError if train and dev share an id, TrainingError on a
// non-finite loss.
TrainReport train(Classifier& model, std::span<const Utterance> train_set,
                  std::span<const Utterance> dev_set, const EmbeddingStore& store,
                  const TrainConfig& cfg, const TrainHooks& hooks = {});

// Scores and EER of `model` on a labeled set.
struct Evaluation {
  EvalReport report;
  std::vector<ScoredItem> items;
};
Evaluation evaluate(const Classifier& model, std::span<const Utterance> data,
                    const EmbeddingStore& store);

using ModelFactory = std::function<Classifier()>;

struct LrRangePoint {
  double lr = 0.0;
  double loss = 0.0;
  double smoothed = 0.0;
};

struct LrRangeResult {
  double suggested_lr_max = 0.0;
  double suggested_lr_min = 0.0;
  std::vector<LrRangePoint> curve;
  bool stopped_early = false;
};

// Trains a fresh model while the learning rate grows exponentially from lr_lo
// to lr_hi. Loss is smoothed with a bias-corrected EMA (beta 0.98); the run
// stops once the smoothed loss exceeds 4x its running minimum. Suggested
// lr_max is the lr at the smoothed minimum over 10, lr_min is lr_max / 100.
// Throws RangeError if the loss blows up immediately (lr_lo too high).
LrRangeResult lr_range_test(const ModelFactory& factory, std::span<const Utterance> data,
                            const EmbeddingStore& store, double lr_lo, double lr_hi,
                            std::size_t steps, std::size_t batch_size = 32, std::uint64_t seed = 1);

struct TransferResult {
  Classifier model;
  TrainReport pretrain;
  TrainReport finetune;
};

// Phase 1 trains a fresh model on the pretraining data; phase 2 continues from
// those parameters on the follow-up data. Requires cfg_pre.lr_max >=
// cfg_ft.lr_max (ConfigError otherwise).
TransferResult transfer_train(const ModelFactory& factory, std::span<const Utterance> pre_train,
                              std::span<const Utterance> pre_dev, std::span<const Utterance> ft_train,
                              std::span<const Utterance> ft_dev, const EmbeddingStore& store,
                              TrainConfig cfg_pre, TrainConfig cfg_ft, const TrainHooks& hooks = {});

}  // namespace ddsd
