#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ddsd {

enum class Label : std::uint8_t { NDD = 0, DD = 1 };

inline double label_value(Label l) { return l == Label::DD ? 1.0 : 0.0; }
std::string_view label_name(Label l);

// One follow-up turn plus the turn before it. Tokens are pre-tokenized ASR
// output (lowercase, whitespace-free).
struct Utterance {
  std::string id;
  std::vector<std::string> prev_tokens;
  std::vector<std::string> cur_tokens;
  std::vector<double> cur_confidences;
  std::optional<std::vector<double>> prev_confidences;
  std::optional<Label> label;

  // Throws ContractError naming the broken invariant.
  void validate() const;

  friend bool operator==(const Utterance&, const Utterance&) = default;
};

// An item of the unlabeled pool. The gold label, if the source had one, is
// dropped on construction and there is no way to get it back.
class UnlabeledUtterance {
 public:
  explicit UnlabeledUtterance(Utterance u) : u_(std::move(u)) { u_.label.reset(); }

  const Utterance& utterance() const noexcept { return u_; }
  const std::string& id() const noexcept { return u_.id; }

  // Attach a pseudo-label, producing an ordinary labeled utterance.
  Utterance with_label(Label l) const {
    Utterance out = u_;
    out.label = l;
    return out;
  }

 private:
  Utterance u_;
};

}  // namespace ddsd
