#include "ddsd/ablation.hpp"

#include <algorithm>
#include <cstdio>

#include "ddsd/errors.hpp"
#include "ddsd/text.hpp"

namespace ddsd {

std::vector<FeatureOptions> ablation_feature_sets() {
  return {FeatureOptions{}, FeatureOptions{false, true, true}, FeatureOptions{true, false, true},
          FeatureOptions{true, true, false}};
}

std::vector<AblationRow> run_ablation(const Corpus& corpus, const EmbeddingStore& store,
                                      const ModelConfig& base, const TrainConfig& cfg,
                                      const std::function<void(const std::string&)>& log) {
  const auto train_set = corpus.select(Partition::Train);
  const auto dev_set = corpus.select(Partition::Dev);
  const auto test_set = corpus.select(Partition::Test);
  const bool has_prev = std::any_of(train_set.begin(), train_set.end(),
                                    [](const Utterance& u) { return !u.prev_tokens.empty(); });
  if (!has_prev) throw ContractError("ablation needs a corpus with previous turns");

  std::vector<AblationRow> rows;
  for (const FeatureOptions& f : ablation_feature_sets()) {
    AblationRow row;
    row.features = f;
    try {
      ModelConfig mc = base;
      mc.features = f;
      Classifier model = Classifier::create(mc, store);
      train(model, train_set, dev_set, store, cfg);
      row.dev_loss = evaluate(model, dev_set, store).report.mean_loss;
      row.eer = evaluate(model, test_set, store).report.eer;
      if (log) log(f.code() + ": test EER " + format_fixed(*row.eer, 2));
    } catch (const Error& e) {
      row.error = e.what();
      if (log) log(f.code() + ": failed: " + row.error);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_ablation_table(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << "features  EER\n";
  for (const auto& r : rows) {
    std::string code = r.features.code();
    code.resize(std::max<std::size_t>(code.size(), 8), ' ');
    out << code << "  " << (r.eer ? format_fixed(*r.eer, 1) : "error: " + r.error) << '\n';
  }
}

void write_ablation_tsv(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << "features\teer\tdev_loss\n";
  for (const auto& r : rows) {
    out << r.features.code() << '\t';
    if (r.eer) {
      out << format_double(*r.eer) << '\t' << format_double(r.dev_loss) << '\n';
    } else {
      out << "error\t" << r.error << '\n';
    }
  }
}

}  // namespace ddsd
