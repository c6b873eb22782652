#include "ddsd/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"

#include "ddsd/errors.hpp"
#include "ddsd/models.hpp"
#include "ddsd/text.hpp"

namespace ddsd {

EvalReport compute_eer(std::span<const ScoredItem> items) {
  std::size_t n_dd = 0, n_ndd = 0;
  for (const auto& it : items) {
    if (!std::isfinite(it.score)) throw ContractError("non-finite score for item '" + it.id + "'");
    (it.label == Label::DD ? n_dd : n_ndd)++;
  }
  if (n_dd == 0 || n_ndd == 0) throw ContractError("EER needs both DD and NDD items");

  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return items[a].score < items[b].score; });

  EvalReport report;
  double loss = 0.0;
  for (const auto& it : items) loss += bce_loss(it.score, it.label);
  report.mean_loss = loss / static_cast<double>(items.size());

  // Sweep thresholds upward. Before threshold s_j, everything below it has
  // been rejected.
  std::size_t rejected_dd = 0, rejected_ndd = 0;
  const double inv_dd = 1.0 / static_cast<double>(n_dd);
  const double inv_ndd = 1.0 / static_cast<double>(n_ndd);
  std::size_t i = 0;
  while (i < order.size()) {
    const double theta = items[order[i]].score;
    report.roc.push_back({static_cast<double>(n_ndd - rejected_ndd) * inv_ndd,
                          static_cast<double>(rejected_dd) * inv_dd, theta});
    while (i < order.size() && items[order[i]].score == theta) {
      (items[order[i]].label == Label::DD ? rejected_dd : rejected_ndd)++;
      ++i;
    }
  }
  const double top = items[order.back()].score;
  report.roc.push_back({0.0, 1.0, std::nextafter(top, INFINITY)});

  for (std::size_t j = 0; j < report.roc.size(); ++j) {
    const RocPoint& p = report.roc[j];
    const double diff = p.far - p.frr;
    if (diff > 0.0) continue;
    if (diff == 0.0 || j == 0) {
      report.eer = 100.0 * p.far;
      report.threshold_at_eer = p.threshold;
      break;
    }
    const RocPoint& q = report.roc[j - 1];
    const double dq = q.far - q.frr;
    const double w = dq / (dq - diff);
    report.eer = 100.0 * (q.far + w * (p.far - q.far));
    report.threshold_at_eer = q.threshold + w * (p.threshold - q.threshold);
    break;
  }
  return report;
}

void write_roc(std::ostream& out, const EvalReport& report) {
  for (const auto& p : report.roc) {
    out << format_double(p.far) << ' ' << format_double(p.frr) << ' ' << format_double(p.threshold)
        << '\n';
  }
}

std::string to_json_line(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["eer"] = report.eer;
  j["threshold_at_eer"] = report.threshold_at_eer;
  j["mean_loss"] = report.mean_loss;
  j["roc_points"] = report.roc.size();
  return j.dump();
}

}  // namespace ddsd
