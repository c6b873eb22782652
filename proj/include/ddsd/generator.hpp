#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "ddsd/corpus.hpp"
#include "ddsd/numerics/matrix.hpp"
#include "ddsd/utterance.hpp"

// Synthetic follow-up corpus. Populations:
//   ambiguous     short texts from the ambiguity table, label drawn from its prior
//   command       well-formed DD requests from a template grammar
//   contextual    DD follow-up fragments ("and for tomorrow") after a same-topic request
//   distractor    NDD fragments after a request on an unrelated topic
//   unstructured  NDD word salad: shuffled or spliced grammar token sequences
//   background    NDD side conversation, low ASR confidence
// First-turn mode instead emits wakeword-prefixed requests (DD) and false wakes (NDD).

namespace ddsd {

struct AmbiguousText {
  std::string text;
  double p_dd = 0.5;
  double p_ndd = 0.5;  // rows are normalized, so p_dd + p_ndd need not be 1
  double weight = 1.0;
};

std::vector<AmbiguousText> default_ambiguity_table();

struct BetaParams {
  double a = 1.0;
  double b = 1.0;
};

enum class GeneratorMode : std::uint8_t { FollowUp, FirstTurn };

struct GeneratorSpec {
  GeneratorMode mode = GeneratorMode::FollowUp;
  std::size_t n_train = 24000;
  std::size_t n_dev = 2400;
  std::size_t n_test = 2400;
  std::size_t n_unlabeled = 60000;
  double dd_ndd_ratio = 5.0;
  std::vector<AmbiguousText> ambiguity_table = default_ambiguity_table();
  double ambiguous_fraction = 0.297;   // of all items
  double contextual_fraction = 0.15;   // of non-ambiguous DD
  double unstructured_fraction = 0.4;  // of non-ambiguous NDD
  double distractor_fraction = 0.1;    // of non-ambiguous NDD
  bool with_prev = true;               // follow-up items carry the preceding request
  BetaParams dd_conf{8.0, 2.0};
  BetaParams ndd_conf{4.0, 4.0};
  BetaParams background_conf{2.0, 5.0};
  // Probability that an item's confidences come from the other class.
  double confidence_confusion = 0.15;
  // Probability that unstructured / distractor NDD get DD-like confidences
  // (clearly recognized speech that is still not meant for the device).
  double unstructured_clear = 0.5;
  double distractor_clear = 0.5;
  std::uint64_t seed = 1;

  // Throws ConfigError on out-of-range fractions or a non-positive ratio.
  void validate() const;
};

// Named starting points: followup (default), ambiguity, contextual, structure,
// first-turn, ssl. Throws ConfigError for unknown names.
GeneratorSpec generator_preset(std::string_view name);
std::vector<std::string> generator_preset_names();

// Deterministic given spec.seed. Labeled partitions hit the DD:NDD ratio
// exactly (rounded to whole items); the unlabeled partition is drawn from the
// same mixture and stored without labels. Throws ConfigError if the
// ambiguous labels alone keep overshooting one class (1000 redraws).
Corpus generate(const GeneratorSpec& spec);

// Labeled items only, as one flat list (no partitions); used by tests.
std::vector<Utterance> generate_items(const GeneratorSpec& spec, std::size_t n, std::string_view id_prefix);

// Every token the grammar can emit, sorted.
std::vector<std::string> grammar_vocabulary();
// Tokens deliberately left out of the synthetic vector table (contact names).
std::vector<std::string> oov_tokens();

// Topic-clustered random vectors for the grammar vocabulary minus oov_tokens().
struct SyntheticVectors {
  std::vector<std::string> words;
  num::Matrix table;
};
SyntheticVectors synthetic_vectors(std::size_t dim, std::uint64_t seed);

// Stand-in for an acoustic-only directedness model: sigmoid of the summed
// per-token log-likelihood ratio of the DD and NDD confidence models.
using AcousticScorer = std::function<double(const Utterance&)>;
AcousticScorer confidence_scorer(const GeneratorSpec& spec);

}  // namespace ddsd
