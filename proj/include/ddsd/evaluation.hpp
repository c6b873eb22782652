#pragma once

#include <cstddef>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ddsd/utterance.hpp"

namespace ddsd {

struct ScoredItem {
  double score = 0.0;  // p(DD)
  Label label = Label::NDD;
  std::string id;
};

struct RocPoint {
  double far = 0.0;  // fraction of NDD with score >= threshold
  double frr = 0.0;  // fraction of DD with score < threshold
  double threshold = 0.0;
};

struct EvalReport {
  double eer = 0.0;  // percent
  double threshold_at_eer = 0.0;
  std::vector<RocPoint> roc;  // ascending threshold
  double mean_loss = 0.0;
};

// Equal error rate with DD as the accepted (positive) class. Scores equal to
// the threshold count as accepted. ROC points sit at every distinct score
// plus one point above the maximum; EER and its threshold are linearly
// interpolated between the two points where FAR - FRR changes sign.
// Throws ContractError unless both labels are present.
EvalReport compute_eer(std::span<const ScoredItem> items);

// One line per ROC point: "far frr threshold".
void write_roc(std::ostream& out, const EvalReport& report);
// Machine-readable single-line JSON (roc omitted).
std::string to_json_line(const EvalReport& report);

}  // namespace ddsd
