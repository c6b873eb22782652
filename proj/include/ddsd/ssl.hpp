#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ddsd/generator.hpp"
#include "ddsd/training.hpp"
#include "ddsd/utterance.hpp"

namespace ddsd {

struct SslConfig {
  double dd_quantile = 0.01;
  double ndd_quantile = 0.002;
  std::size_t max_passes = 20;  // pseudo-labeling rounds after the supervised pass 0
  std::size_t patience = 3;     // stop after this many passes without a dev-loss improvement
  double fusion_weight = 0.4;
  double fusion_gamma = 3.0;

  void validate() const;
};

// 0.5 + sign(a - 0.5) * |2a - 1|^gamma / 2
double compress_acoustic(double a, double gamma);
// (1 - w) * lex + w * compress_acoustic(ac). ContractError unless both are in [0,1].
double fuse_scores(double lex_score, double ac_score, const SslConfig& cfg);

// Pseudo-label counts for a pool of `pool` items: n_ndd = floor(q_ndd * pool)
// and n_dd = n_ndd * q_dd / q_ndd (rounded), so the added DD:NDD ratio is
// exactly the quantile ratio whenever that ratio is a whole number.
struct PseudoCounts {
  std::size_t dd = 0;
  std::size_t ndd = 0;
};
PseudoCounts pseudo_label_counts(std::size_t pool, const SslConfig& cfg);

// Warning text if the quantile ratio is more than 10% off the labeled set's
// DD:NDD ratio.
std::optional<std::string> prior_ratio_warning(std::span<const Utterance> labeled, const SslConfig& cfg);

struct PassRecord {
  std::size_t pass = 0;
  double dev_loss = 0.0;
  double test_eer = 0.0;
  std::size_t added_dd = 0;  // pseudo-labels folded in before this pass trained
  std::size_t added_ndd = 0;
  std::size_t labeled_size = 0;
  std::size_t unlabeled_size = 0;
};

struct SslState {
  std::vector<Utterance> labeled;
  std::vector<UnlabeledUtterance> unlabeled;
  std::vector<PassRecord> history;
  std::size_t selected_pass = 0;
};

// argmin of dev loss, earliest pass on ties. ContractError on empty history.
std::size_t select_model(std::span<const double> dev_losses);
std::size_t select_model(const SslState& state);

// {pass, dev_loss, test_eer, added_dd, added_ndd} per line.
void write_history(std::ostream& out, std::span<const PassRecord> history);

struct SslHooks {
  std::function<void(const std::string&)> warn;
  // After each pass has been recorded (and before the next pseudo-labeling).
  std::function<void(const SslState&)> on_pass;
  TrainHooks train;
};

struct SslResult {
  SslState state;
  Classifier model;  // trained at the selected pass
};

// Self-teaching loop. Each pass retrains a fresh model on the labeled pool,
// records dev loss and test EER, then moves the highest fused scores of the
// unlabeled pool in as DD and the lowest as NDD. Stops after max_passes, when
// dev loss stalls for `patience` passes, or when no item would be added.
// Throws IntegrityError if L, U, dev and test are not disjoint by id.
SslResult ssl_run(const ModelFactory& factory, std::span<const Utterance> labeled,
                  std::span<const UnlabeledUtterance> unlabeled, std::span<const Utterance> dev,
                  std::span<const Utterance> test, const EmbeddingStore& store,
                  const AcousticScorer& acoustic, const SslConfig& cfg, const TrainConfig& train_cfg,
                  const SslHooks& hooks = {});

}  // namespace ddsd
