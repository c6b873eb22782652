#pragma once

#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ddsd/corpus.hpp"
#include "ddsd/embeddings.hpp"
#include "ddsd/models.hpp"
#include "ddsd/training.hpp"

namespace ddsd {

struct AblationRow {
  FeatureOptions features;
  std::optional<double> eer;  // test EER in percent; empty if the row failed
  double dev_loss = 0.0;
  std::string error;
};

// The four feature sets of the ablation, full set first.
std::vector<FeatureOptions> ablation_feature_sets();

// Trains and evaluates `base` once per feature set with identical seed and
// training config (train / dev / test partitions of `corpus`). A row that
// throws a domain error is recorded and the remaining rows still run.
std::vector<AblationRow> run_ablation(const Corpus& corpus, const EmbeddingStore& store,
                                      const ModelConfig& base, const TrainConfig& cfg,
                                      const std::function<void(const std::string&)>& log = {});

// "features  EER" table, one decimal.
void write_ablation_table(std::ostream& out, const std::vector<AblationRow>& rows);
// features<TAB>eer<TAB>dev_loss with full precision; "error" rows carry the message.
void write_ablation_tsv(std::ostream& out, const std::vector<AblationRow>& rows);

}  // namespace ddsd
