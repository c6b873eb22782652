#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "ddsd/ablation.hpp"
#include "ddsd/errors.hpp"
#include "ddsd/evaluation.hpp"
#include "ddsd/generator.hpp"
#include "ddsd/rng.hpp"

using namespace ddsd;

namespace {

std::vector<ScoredItem> random_items(Rng& rng, std::size_t n, double shift) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<ScoredItem> out;
  for (std::size_t i = 0; i < n; ++i) {
    const bool dd = uniform01(rng) < 0.6;
    const double z = nd(rng) + (dd ? shift : 0.0);
    // quantize so ties occur
    const double s = std::round(1000.0 / (1.0 + std::exp(-z))) / 1000.0;
    out.push_back({s, dd ? Label::DD : Label::NDD, "i" + std::to_string(i)});
  }
  if (std::none_of(out.begin(), out.end(), [](auto& x) { return x.label == Label::DD; })) out[0].label = Label::DD;
  if (std::none_of(out.begin(), out.end(), [](auto& x) { return x.label == Label::NDD; })) out[1].label = Label::NDD;
  return out;
}

// Scans every midpoint between distinct scores (plus the two ends) and returns
// the average of FAR and FRR at the threshold minimizing |FAR - FRR|.
double brute_force_eer(const std::vector<ScoredItem>& items) {
  std::vector<double> s;
  for (const auto& it : items) s.push_back(it.score);
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  std::vector<double> thresholds{s.front() - 1.0, s.back() + 1.0};
  for (std::size_t i = 0; i + 1 < s.size(); ++i) thresholds.push_back(0.5 * (s[i] + s[i + 1]));
  double n_dd = 0, n_ndd = 0;
  for (const auto& it : items) (it.label == Label::DD ? n_dd : n_ndd) += 1;
  double best_gap = INFINITY, best = 0;
  for (double t : thresholds) {
    double fa = 0, fr = 0;
    for (const auto& it : items) {
      if (it.label == Label::NDD && it.score >= t) fa += 1;
      if (it.label == Label::DD && it.score < t) fr += 1;
    }
    const double far = 100 * fa / n_ndd, frr = 100 * fr / n_dd;
    if (std::abs(far - frr) < best_gap) {
      best_gap = std::abs(far - frr);
      best = 0.5 * (far + frr);
    }
  }
  return best;
}

}  // namespace

TEST_CASE("separated scores give EER 0") {
  std::vector<ScoredItem> items;
  for (int i = 0; i < 50; ++i) items.push_back({0.6 + 0.001 * i, Label::DD, ""});
  for (int i = 0; i < 10; ++i) items.push_back({0.1 + 0.01 * i, Label::NDD, ""});
  CHECK(compute_eer(items).eer == 0.0);

  // fully inverted scores give 100
  for (auto& it : items) it.score = 1.0 - it.score;
  CHECK(compute_eer(items).eer == doctest::Approx(100.0));
}

TEST_CASE("single class is rejected") {
  std::vector<ScoredItem> items{{0.2, Label::DD, "a"}, {0.7, Label::DD, "b"}};
  CHECK_THROWS_AS(compute_eer(items), ContractError);
  CHECK_THROWS_AS(compute_eer(std::vector<ScoredItem>{}), ContractError);
}

TEST_CASE("chance-level scores give EER near 50") {
  Rng rng(1);
  std::vector<ScoredItem> items;
  for (int i = 0; i < 10000; ++i) items.push_back({uniform01(rng), uniform01(rng) < 0.5 ? Label::DD : Label::NDD, ""});
  const double eer = compute_eer(items).eer;
  CHECK(eer >= 48.0);
  CHECK(eer <= 52.0);
}

TEST_CASE("interpolated EER matches the brute-force threshold scan") {
  Rng rng(2);
  for (int k = 0; k < 20; ++k) {
    auto items = random_items(rng, 1000, 0.3 * k);
    const auto r = compute_eer(items);
    CHECK(std::abs(r.eer - brute_force_eer(items)) <= 0.5);
    CHECK(r.eer >= 0.0);
    CHECK(r.eer <= 100.0);
  }
}

TEST_CASE("ROC is monotone and tie convention holds") {
  Rng rng(3);
  auto items = random_items(rng, 500, 1.0);
  const auto r = compute_eer(items);
  REQUIRE(r.roc.size() >= 2);
  for (std::size_t i = 1; i < r.roc.size(); ++i) {
    CHECK(r.roc[i].threshold > r.roc[i - 1].threshold);
    CHECK(r.roc[i].far <= r.roc[i - 1].far);
    CHECK(r.roc[i].frr >= r.roc[i - 1].frr);
  }
  // all scores tied: at the shared threshold everything is accepted
  std::vector<ScoredItem> tied{{0.5, Label::DD, ""}, {0.5, Label::NDD, ""}, {0.5, Label::NDD, ""}};
  const auto t = compute_eer(tied);
  CHECK(t.roc.front().far == 1.0);
  CHECK(t.roc.front().frr == 0.0);
  CHECK(t.eer == doctest::Approx(50.0));
}

TEST_CASE("EER invariances") {
  Rng rng(4);
  for (int k = 0; k < 10; ++k) {
    auto items = random_items(rng, 800, 0.5 + 0.2 * k);
    const double base = compute_eer(items).eer;

    auto mono = items;
    for (auto& it : mono) it.score = std::pow(it.score, 3.0) * 0.5 + 0.1;
    CHECK(compute_eer(mono).eer == doctest::Approx(base).epsilon(1e-9));

    auto dup = items;
    dup.insert(dup.end(), items.begin(), items.end());
    CHECK(compute_eer(dup).eer == doctest::Approx(base).epsilon(1e-9));

    auto flip = items;
    for (auto& it : flip) {
      it.label = it.label == Label::DD ? Label::NDD : Label::DD;
      it.score = 1.0 - it.score;
    }
    CHECK(compute_eer(flip).eer == doctest::Approx(base).epsilon(1e-9));
  }
}

TEST_CASE("report serialization") {
  Rng rng(5);
  auto r = compute_eer(random_items(rng, 100, 1.0));
  std::ostringstream roc;
  write_roc(roc, r);
  const std::string s = roc.str();
  CHECK(static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')) == r.roc.size());
  const std::string j = to_json_line(r);
  CHECK(j.find("\"eer\"") != std::string::npos);
  CHECK(j.find('\n') == std::string::npos);
}

TEST_CASE("ablation runs four rows and survives failing rows") {
  auto spec = generator_preset("ambiguity");
  spec.n_train = 120;
  spec.n_dev = 36;
  spec.n_test = 36;
  spec.n_unlabeled = 0;
  auto corpus = generate(spec);
  auto vecs = synthetic_vectors(6, 1);

  ModelConfig mc;
  mc.arch = Architecture::AvgDnn;
  mc.embed_dim = 6;
  mc.hidden = 4;
  TrainConfig tc;
  tc.epochs = 2;

  auto store = EmbeddingStore::from_table(vecs.words, vecs.table, 1);
  auto rows = run_ablation(corpus, store, mc, tc);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].features.code() == "c,p,t");
  CHECK(rows[1].features.code() == "-c");
  CHECK(rows[2].features.code() == "-p");
  CHECK(rows[3].features.code() == "-t");
  for (const auto& r : rows) CHECK(r.eer.has_value());

  // A NaN vector on a current-turn token breaks every row that reads current
  // text; the "-c" row, which zeroes that text, still completes.
  auto words = vecs.words;
  words.push_back("poison");
  num::Matrix table(words.size(), 6);
  for (std::size_t i = 0; i < vecs.words.size(); ++i) std::copy_n(vecs.table.row(i).begin(), 6, table.row(i).begin());
  for (double& v : table.row(words.size() - 1)) v = std::nan("");
  auto bad_store = EmbeddingStore::from_table(words, table, 1);
  Corpus bad = corpus;
  for (auto& u : bad.utterances) {
    if (bad.partition_map.at(u.id) == Partition::Train) {
      u.cur_tokens[0] = "poison";
      break;
    }
  }
  auto bad_rows = run_ablation(bad, bad_store, mc, tc);
  REQUIRE(bad_rows.size() == 4);
  CHECK_FALSE(bad_rows[0].eer.has_value());
  CHECK_FALSE(bad_rows[0].error.empty());
  CHECK(bad_rows[1].eer.has_value());
  CHECK_FALSE(bad_rows[2].eer.has_value());
  CHECK_FALSE(bad_rows[3].eer.has_value());

  std::ostringstream table_out, tsv_out;
  write_ablation_table(table_out, bad_rows);
  write_ablation_tsv(tsv_out, bad_rows);
  CHECK(tsv_out.str().find("error") != std::string::npos);

  // no previous turns: ablation is not meaningful
  auto nop = generator_preset("ssl");
  nop.n_train = 60;
  nop.n_dev = 12;
  nop.n_test = 12;
  nop.n_unlabeled = 0;
  CHECK_THROWS_AS(run_ablation(generate(nop), store, mc, tc), ContractError);
}
