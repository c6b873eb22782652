#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ddsd/numerics/matrix.hpp"
#include "ddsd/utterance.hpp"

namespace ddsd {

enum class SpecialToken : std::uint8_t { Oov = 0, SepPrev = 1, SepCur = 2 };
inline constexpr std::size_t kSpecialTokenCount = 3;

// Pre-trained word vectors plus the three special vectors. Pre-trained rows
// are immutable after loading; only special vectors can be replaced (by
// writing back trained values from a model).
class EmbeddingStore {
 public:
  // Text vector format: optional "N d" header, then "token v1 ... vd" lines.
  // Duplicate tokens keep their first occurrence. `limit` caps the vocabulary.
  // Special vectors are drawn from `seed`.
  static EmbeddingStore load_vectors(const std::filesystem::path& path,
                                     std::optional<std::size_t> limit = std::nullopt,
                                     std::uint64_t seed = 0);
  static EmbeddingStore from_table(std::vector<std::string> words, const num::Matrix& vectors,
                                   std::uint64_t seed = 0);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t vocab_size() const noexcept { return words_.size(); }
  const std::vector<std::string>& words() const noexcept { return words_; }

  bool contains(const std::string& token) const { return index_.contains(token); }
  // Unknown tokens map to the OOV vector; never fails.
  std::span<const double> lookup(const std::string& token) const;
  std::span<const double> vector_at(std::size_t i) const;

  std::span<const double> special(SpecialToken t) const;
  void set_special(SpecialToken t, std::span<const double> v);

  // Which special vectors a model should train. OOV defaults to trainable,
  // both separators to frozen.
  bool trainable(SpecialToken t) const { return trainable_[static_cast<std::size_t>(t)]; }
  void set_trainable(SpecialToken t, bool on) { trainable_[static_cast<std::size_t>(t)] = on; }

 private:
  EmbeddingStore() = default;
  void init_specials(std::uint64_t seed);

  std::size_t dim_ = 0;
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<double> table_;
  std::vector<double> specials_[kSpecialTokenCount];
  bool trainable_[kSpecialTokenCount] = {true, false, false};
};

// Shortest round-trip decimal formatting; loading a written file reproduces
// every value bit for bit.
void write_vectors(const std::filesystem::path& path, std::span<const std::string> words,
                   const num::Matrix& vectors);

// Where a frame's embedding came from. Frames whose slot maps to a trainable
// special vector are re-injected from model parameters during forward.
enum class FrameSlot : std::uint8_t { Vocab, Oov, SepPrev, SepCur, Blank };

struct FeatureOptions {
  bool use_cur_text = true;  // off: ablation "-c", current-turn embeddings zeroed
  bool use_prev = true;      // off: ablation "-p", previous turn and its separator dropped
  bool use_conf = true;      // off: ablation "-t", confidence column fixed at 1.0

  std::string code() const;  // e.g. "c,p,t" or "-t"
  friend bool operator==(const FeatureOptions&, const FeatureOptions&) = default;
};

// Inverse of code(); also accepts included letters ("c,t"). ConfigError otherwise.
FeatureOptions parse_feature_code(std::string_view code);

// T×(d+1) frames: [embedding ∥ confidence] per token, separators included.
struct FeatureSequence {
  num::Matrix frames;
  std::vector<bool> mask;
  std::vector<FrameSlot> slots;

  std::size_t length() const noexcept { return frames.rows(); }
  std::size_t width() const noexcept { return frames.cols(); }
};

// Frame order: [SEP_PREV, prev...] (when use_prev and prev nonempty), then
// [SEP_CUR, cur...]. Separator frames carry confidence 1.0, as do previous
// tokens without confidences.
FeatureSequence assemble(const Utterance& u, const EmbeddingStore& store,
                         const FeatureOptions& options = {});

}  // namespace ddsd
