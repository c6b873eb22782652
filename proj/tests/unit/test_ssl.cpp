#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "doctest.h"
#include "ddsd/errors.hpp"
#include "ddsd/generator.hpp"
#include "ddsd/ssl.hpp"

using namespace ddsd;

TEST_CASE("acoustic compression and fusion") {
  SslConfig cfg;
  for (double g : {1.0, 2.0, 3.0, 7.5}) {
    CHECK(compress_acoustic(0.5, g) == 0.5);
    CHECK(compress_acoustic(0.0, g) == 0.0);
    CHECK(compress_acoustic(1.0, g) == 1.0);
  }
  CHECK(compress_acoustic(0.6, 3.0) == doctest::Approx(0.504).epsilon(1e-12));
  CHECK(compress_acoustic(0.4, 3.0) == doctest::Approx(0.496).epsilon(1e-12));

  cfg.fusion_weight = 0.0;
  for (double lex : {0.0, 0.123456789, 0.77, 1.0}) CHECK(fuse_scores(lex, 0.9, cfg) == lex);

  cfg.fusion_weight = 0.4;
  CHECK(fuse_scores(0.8, 0.6, cfg) == doctest::Approx(0.6 * 0.8 + 0.4 * 0.504).epsilon(1e-12));
  CHECK_THROWS_AS(fuse_scores(1.2, 0.5, cfg), ContractError);
  CHECK_THROWS_AS(fuse_scores(0.5, -0.1, cfg), ContractError);
  CHECK_THROWS_AS(fuse_scores(std::nan(""), 0.5, cfg), ContractError);

  // monotone non-decreasing in each argument
  for (int i = 0; i <= 20; ++i) {
    for (int j = 0; j < 20; ++j) {
      const double a = i / 20.0, b = j / 20.0, b2 = (j + 1) / 20.0;
      CHECK(fuse_scores(a, b, cfg) <= fuse_scores(a, b2, cfg));
      CHECK(fuse_scores(b, a, cfg) <= fuse_scores(b2, a, cfg));
    }
  }
}

TEST_CASE("model selection") {
  const double h1[] = {0.176, 0.175, 0.173, 0.170, 0.171};
  CHECK(select_model(h1) == 3);
  const double h2[] = {0.2, 0.2, 0.2};
  CHECK(select_model(h2) == 0);
  const double h3[] = {0.5};
  CHECK(select_model(h3) == 0);
  CHECK_THROWS_AS(select_model(std::span<const double>{}), ContractError);
}

TEST_CASE("pseudo-label counts keep the quantile ratio") {
  SslConfig cfg;
  for (std::size_t pool : {499u, 500u, 1000u, 1499u, 60000u, 12345u}) {
    auto c = pseudo_label_counts(pool, cfg);
    CHECK(c.ndd == pool / 500);
    CHECK(c.dd == 5 * c.ndd);
    CHECK(c.dd <= static_cast<std::size_t>(0.01 * static_cast<double>(pool)));
  }
  SslConfig bad;
  bad.dd_quantile = 0.7;
  bad.ndd_quantile = 0.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("prior ratio warning") {
  std::vector<Utterance> balanced;
  for (int i = 0; i < 10; ++i) {
    balanced.push_back({"b" + std::to_string(i), {}, {"x"}, {0.5}, std::nullopt, i % 2 ? Label::DD : Label::NDD});
  }
  SslConfig cfg;
  CHECK(prior_ratio_warning(balanced, cfg).has_value());
  std::vector<Utterance> five_to_one;
  for (int i = 0; i < 12; ++i) {
    five_to_one.push_back({"f" + std::to_string(i), {}, {"x"}, {0.5}, std::nullopt, i % 6 ? Label::DD : Label::NDD});
  }
  CHECK_FALSE(prior_ratio_warning(five_to_one, cfg).has_value());
}

namespace {

struct SslFixture {
  Corpus corpus;
  SyntheticVectors vecs;
  ModelConfig mc;
  TrainConfig tc;

  explicit SslFixture(std::size_t n_unlabeled) {
    auto spec = generator_preset("ssl");
    spec.n_train = 60;
    spec.n_dev = 30;
    spec.n_test = 30;
    spec.n_unlabeled = n_unlabeled;
    corpus = generate(spec);
    vecs = synthetic_vectors(6, 1);
    mc.arch = Architecture::Lstm;
    mc.embed_dim = 6;
    mc.hidden = 4;
    mc.layers = 1;
    mc.features = parse_feature_code("-p");
    tc.epochs = 2;
    tc.batch_size = 16;
  }

  std::vector<UnlabeledUtterance> pool() const {
    std::vector<UnlabeledUtterance> u;
    for (auto& x : corpus.select(Partition::Unlabeled)) u.emplace_back(x);
    return u;
  }
};

}  // namespace

TEST_CASE("self-training loop invariants") {
  SslFixture fx(1500);
  auto store = EmbeddingStore::from_table(fx.vecs.words, fx.vecs.table, 1);
  auto labeled = fx.corpus.select(Partition::Train);
  auto dev = fx.corpus.select(Partition::Dev), test = fx.corpus.select(Partition::Test);
  auto pool = fx.pool();
  std::set<std::string> all_ids;
  for (auto& u : labeled) all_ids.insert(u.id);
  for (auto& u : pool) all_ids.insert(u.id());
  std::map<std::string, Label> gold;
  for (auto& u : labeled) gold[u.id] = *u.label;

  SslConfig cfg;
  cfg.dd_quantile = 0.05;
  cfg.ndd_quantile = 0.01;
  cfg.max_passes = 3;
  cfg.patience = 10;
  ModelFactory factory = [&] { return Classifier::create(fx.mc, store); };

  std::size_t last_labeled = 0;
  int passes_seen = 0;
  SslHooks hooks;
  hooks.on_pass = [&](const SslState& s) {
    ++passes_seen;
    std::set<std::string> seen;
    for (auto& u : s.labeled) CHECK(seen.insert(u.id).second);
    for (auto& u : s.unlabeled) CHECK(seen.insert(u.id()).second);
    CHECK(seen == all_ids);
    CHECK(s.labeled.size() > last_labeled);
    last_labeled = s.labeled.size();
    for (auto& u : s.labeled) {
      auto it = gold.find(u.id);
      if (it != gold.end()) CHECK(*u.label == it->second);
    }
  };
  auto result = ssl_run(factory, labeled, pool, dev, test, store, confidence_scorer(generator_preset("ssl")), cfg, fx.tc, hooks);
  const auto& st = result.state;
  REQUIRE(st.history.size() == 4);
  CHECK(passes_seen == 4);
  CHECK(st.history[0].added_dd == 0);
  std::size_t u_size = pool.size();
  for (std::size_t k = 1; k < st.history.size(); ++k) {
    const auto& h = st.history[k];
    CHECK(h.pass == k);
    CHECK(h.added_ndd == u_size / 100);
    CHECK(h.added_dd == 5 * h.added_ndd);
    u_size -= h.added_dd + h.added_ndd;
    CHECK(h.unlabeled_size == u_size);
  }
  std::vector<double> losses;
  for (auto& h : st.history) losses.push_back(h.dev_loss);
  CHECK(st.selected_pass == select_model(losses));

  auto again = ssl_run(factory, labeled, pool, dev, test, store, confidence_scorer(generator_preset("ssl")), cfg, fx.tc);
  REQUIRE(again.state.history.size() == st.history.size());
  for (std::size_t k = 0; k < st.history.size(); ++k) CHECK(again.state.history[k].dev_loss == st.history[k].dev_loss);
}

TEST_CASE("self-training stops cleanly when the pool runs dry") {
  SslFixture fx(40);
  auto store = EmbeddingStore::from_table(fx.vecs.words, fx.vecs.table, 1);
  auto labeled = fx.corpus.select(Partition::Train);
  SslConfig cfg;
  cfg.dd_quantile = 0.25;
  cfg.ndd_quantile = 0.05;
  cfg.max_passes = 50;
  cfg.patience = 50;
  ModelFactory factory = [&] { return Classifier::create(fx.mc, store); };
  std::vector<std::string> warnings;
  SslHooks hooks;
  hooks.warn = [&](const std::string& w) { warnings.push_back(w); };
  SslResult r = ssl_run(factory, labeled, fx.pool(), fx.corpus.select(Partition::Dev), fx.corpus.select(Partition::Test),
                        store, confidence_scorer(generator_preset("ssl")), cfg, fx.tc, hooks);
  CHECK(r.state.history.size() >= 2);
  CHECK(r.state.history.size() < 50);
  CHECK(r.state.unlabeled.size() < 40);
  CHECK(pseudo_label_counts(r.state.unlabeled.size(), cfg).ndd == 0);
  CHECK(warnings.empty());
}

TEST_CASE("self-training rejects overlapping pools") {
  SslFixture fx(50);
  auto store = EmbeddingStore::from_table(fx.vecs.words, fx.vecs.table, 1);
  auto labeled = fx.corpus.select(Partition::Train);
  auto dev = fx.corpus.select(Partition::Dev);
  dev[0].id = labeled[0].id;
  ModelFactory factory = [&] { return Classifier::create(fx.mc, store); };
  CHECK_THROWS_AS(ssl_run(factory, labeled, fx.pool(), dev, fx.corpus.select(Partition::Test), store,
                          confidence_scorer(generator_preset("ssl")), SslConfig{}, fx.tc),
                  IntegrityError);
}

TEST_CASE("history serialization") {
  std::vector<PassRecord> h{{0, 0.3, 12.0, 0, 0, 60, 100}, {1, 0.25, 11.0, 5, 1, 66, 94}};
  std::ostringstream out;
  write_history(out, h);
  const std::string s = out.str();
  CHECK(std::count(s.begin(), s.end(), '\n') == 2);
  CHECK(s.find("\"added_dd\":5") != std::string::npos);
}
