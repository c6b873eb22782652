#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ddsd/embeddings.hpp"
#include "ddsd/numerics/tape.hpp"

namespace ddsd {

enum class Architecture : std::uint8_t { AvgDnn, Lstm, LstmAttention };

std::string_view architecture_tag(Architecture a);  // "avg-dnn", "lstm", "lstm-attn"
Architecture parse_architecture(std::string_view tag);  // throws ConfigError

struct ModelConfig {
  Architecture arch = Architecture::LstmAttention;
  std::size_t embed_dim = 300;  // d; frames are d+1 wide
  std::size_t hidden = 150;
  std::size_t layers = 3;  // LSTM only
  std::uint64_t seed = 1;
  FeatureOptions features;
  // Special vectors that become model parameters. Defaults follow the store.
  std::array<bool, kSpecialTokenCount> trainable_specials = {true, false, false};
};

// Padded, time-major minibatch. Row t*B+b of `frames` is frame t of sequence
// b; padding rows are zero. Rows whose slot is a trainable special have a
// zeroed embedding block and a 1 in that slot's indicator column.
struct Batch {
  std::size_t size = 0;   // B
  std::size_t steps = 0;  // T (max length)
  std::size_t width = 0;  // d+1
  num::Matrix frames;
  num::Matrix mask;  // B×T, 1 for real frames
  std::vector<std::size_t> lengths;
  std::vector<num::Matrix> step_mask;    // per t: B×1
  std::vector<num::Matrix> step_unmask;  // per t: 1 - step_mask
  std::vector<bool> step_full;           // per t: every sequence still running
  std::array<std::optional<num::Matrix>, kSpecialTokenCount> indicators;  // (T·B)×1
  num::Matrix labels;  // B×1; empty when unlabeled
};

Batch make_batch(std::span<const FeatureSequence* const> seqs, std::span<const double> labels,
                 const std::array<bool, kSpecialTokenCount>& trainable_specials);

struct AvgDnnModel {
  num::Parameter w1, b1, w2, b2;
};

struct LstmLayer {
  // Gate blocks in column order: input, forget, cell, output.
  num::Parameter wx, wh, b;
};

struct LstmModel {
  std::vector<LstmLayer> layers;
  num::Parameter wd, bd;  // dense
  num::Parameter wo, bo;  // output
};

struct AttentionHead {
  num::Parameter wa, ba;
};

struct ForwardResult {
  num::Var logits;     // B×1
  num::Var attention;  // B×T, only with an attention head
};

// Mean over each sequence's real frames, then tanh hidden layer, then logit.
ForwardResult forward_avg_dnn(num::Tape& tape, num::Var frames, const Batch& batch,
                              const AvgDnnModel& m);
// Stacked LSTM; sentence embedding is the final real top-layer state, or the
// attention-weighted sum of top-layer states when `attn` is given.
ForwardResult forward_lstm(num::Tape& tape, num::Var frames, const Batch& batch, const LstmModel& m,
                           const AttentionHead* attn);

// Clamped binary cross-entropy of a probability.
double bce_loss(double p, Label y);

class Classifier {
 public:
  static Classifier create(const ModelConfig& cfg, const EmbeddingStore& store);

  const ModelConfig& config() const noexcept { return cfg_; }
  Architecture arch() const noexcept { return cfg_.arch; }

  std::vector<num::Parameter*> parameters();
  std::vector<const num::Parameter*> parameters() const;
  num::Parameter* find_parameter(std::string_view name);
  std::size_t parameter_count() const;

  FeatureSequence features(const Utterance& u, const EmbeddingStore& store) const {
    return assemble(u, store, cfg_.features);
  }
  Batch batch(std::span<const FeatureSequence* const> seqs, std::span<const double> labels) const {
    return make_batch(seqs, labels, cfg_.trainable_specials);
  }

  // Builds the graph for one batch. Parameters are bound into `tape`.
  ForwardResult forward(num::Tape& tape, const Batch& batch) const;

  // p(DD) per sequence, strictly inside (0,1) barring saturation.
  std::vector<double> score(std::span<const FeatureSequence> seqs, std::size_t batch_size = 64) const;
  double score(const FeatureSequence& seq) const;
  // Attention weights over the sequence's frames; empty without attention.
  std::vector<double> attention(const FeatureSequence& seq) const;

  // Copy trained special vectors into the store.
  void write_back(EmbeddingStore& store) const;

  friend void save_model(const std::filesystem::path&, const Classifier&,
                         const std::map<std::string, std::string>&);
  friend struct LoadedModel load_model(const std::filesystem::path&, std::optional<Architecture>);

 private:
  Classifier() = default;
  num::Var input(num::Tape& tape, const Batch& batch) const;

  ModelConfig cfg_;
  std::optional<AvgDnnModel> avg_;
  std::optional<LstmModel> lstm_;
  std::optional<AttentionHead> attn_;
  std::array<std::optional<num::Parameter>, kSpecialTokenCount> specials_;
};

struct LoadedModel {
  Classifier model;
  std::map<std::string, std::string> metadata;
};

// Text container: header {architecture, d, hidden, layers, seed, features},
// free-form metadata lines, then named parameter matrices.
void save_model(const std::filesystem::path& path, const Classifier& model,
                const std::map<std::string, std::string>& metadata = {});
// Rejects a file whose architecture differs from `expected` (ContractError).
LoadedModel load_model(const std::filesystem::path& path,
                       std::optional<Architecture> expected = std::nullopt);

}  // namespace ddsd
