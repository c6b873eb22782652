#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "ddsd/errors.hpp"
#include "ddsd/evaluation.hpp"
#include "ddsd/rng.hpp"
#include "ddsd/training.hpp"

using namespace ddsd;

namespace {

const std::vector<std::string> kFiller = {"the", "a", "now", "please", "it", "on", "up", "my"};

EmbeddingStore toy_store(std::size_t d = 8) {
  Rng rng(42);
  std::normal_distribution<double> n(0.0, 0.6);
  std::vector<std::string> words = kFiller;
  words.push_back("play");
  words.push_back("chat");
  words.push_back("poison");  // NaN vector, used to provoke a non-finite loss
  num::Matrix t(words.size(), d);
  for (double& v : t.values()) v = n(rng);
  for (double& v : t.row(words.size() - 1)) v = std::nan("");
  return EmbeddingStore::from_table(words, t, 1);
}

// DD items contain "play", NDD items "chat", both padded with filler words.
// With `disjoint`, the two classes also draw filler from disjoint halves.
std::vector<Utterance> toy_set(std::size_t n, double dd_fraction, std::uint64_t seed,
                               const std::string& prefix, bool disjoint = false) {
  Rng rng(seed);
  std::vector<Utterance> out;
  const auto n_dd = static_cast<std::size_t>(std::llround(dd_fraction * static_cast<double>(n)));
  for (std::size_t i = 0; i < n; ++i) {
    Utterance u;
    u.id = prefix + std::to_string(i);
    const bool dd = i < n_dd;
    const std::size_t len = 2 + rng() % 4;
    const std::size_t key = rng() % len;
    for (std::size_t k = 0; k < len; ++k) {
      const std::size_t half = kFiller.size() / 2;
      const std::size_t f = disjoint ? (dd ? 0 : half) + rng() % half : rng() % kFiller.size();
      u.cur_tokens.push_back(k == key ? (dd ? "play" : "chat") : kFiller[f]);
      u.cur_confidences.push_back(0.5 + 0.5 * uniform01(rng));
    }
    u.label = dd ? Label::DD : Label::NDD;
    out.push_back(std::move(u));
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

ModelConfig toy_model(Architecture a = Architecture::AvgDnn) {
  ModelConfig c;
  c.arch = a;
  c.embed_dim = 8;
  c.hidden = 8;
  c.layers = 1;
  c.seed = 5;
  return c;
}

std::vector<Utterance> poisoned(std::vector<Utterance> set) {
  set[set.size() / 2].cur_tokens[0] = "poison";
  return set;
}

std::vector<num::Matrix> snapshot(const Classifier& m) {
  std::vector<num::Matrix> out;
  for (const auto* p : m.parameters()) out.push_back(p->value);
  return out;
}

}  // namespace

TEST_CASE("config validation and names") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.lr_min = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.decay = Decay::Exponential;
  c.lr_min = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(parse_decay("linear") == Decay::Linear);
  CHECK(parse_decay("exponential") == Decay::Exponential);
  CHECK_THROWS_AS(parse_decay("cosine"), ConfigError);
  CHECK(phase_name(Phase::Pretrain) == "pretrain");
}

TEST_CASE("learning rate schedule endpoints and bounds") {
  for (Decay d : {Decay::Linear, Decay::Exponential}) {
    TrainConfig c;
    c.decay = d;
    c.lr_max = 0.8;
    c.lr_min = 0.002;
    const std::size_t total = 137;
    CHECK(learning_rate(c, 0, total) == c.lr_max);
    CHECK(learning_rate(c, total - 1, total) == c.lr_min);
    double prev = c.lr_max;
    for (std::size_t k = 0; k < total; ++k) {
      const double lr = learning_rate(c, k, total);
      CHECK(lr <= c.lr_max);
      CHECK(lr >= c.lr_min);
      CHECK(lr <= prev);
      prev = lr;
    }
  }
}

TEST_CASE("zero learning rate leaves parameters bit-identical") {
  auto store = toy_store();
  auto tr = toy_set(60, 0.5, 1, "t"), dv = toy_set(20, 0.5, 2, "d");
  for (auto a : {Architecture::AvgDnn, Architecture::LstmAttention}) {
    auto m = Classifier::create(toy_model(a), store);
    auto before = snapshot(m);
    TrainConfig c;
    c.lr_max = 0.0;
    c.lr_min = 0.0;
    c.epochs = 2;
    auto rep = train(m, tr, dv, store, c);
    CHECK(rep.history.size() == 2);
    CHECK(snapshot(m) == before);
  }
}

TEST_CASE("separable toy corpus reaches dev EER 0") {
  auto store = toy_store();
  auto tr = toy_set(200, 0.5, 3, "t"), dv = toy_set(60, 0.5, 4, "d");
  auto m = Classifier::create(toy_model(), store);
  TrainConfig c;
  c.lr_max = 0.5;
  c.lr_min = 0.05;
  c.epochs = 20;
  c.batch_size = 8;
  auto rep = train(m, tr, dv, store, c);
  CHECK(rep.history.size() == 20);
  CHECK(rep.history[rep.best_epoch].dev_eer == 0.0);
  CHECK(evaluate(m, dv, store).report.eer == 0.0);
}

TEST_CASE("imbalanced 5:1 corpus trains below chance") {
  auto store = toy_store();
  auto tr = toy_set(300, 5.0 / 6.0, 5, "t"), dv = toy_set(120, 5.0 / 6.0, 6, "d");
  auto m = Classifier::create(toy_model(Architecture::Lstm), store);
  TrainConfig c;
  c.epochs = 5;
  c.batch_size = 16;
  auto rep = train(m, tr, dv, store, c);
  CHECK(evaluate(m, dv, store).report.eer < 50.0);
  for (const auto& e : rep.history) {
    CHECK(std::isfinite(e.train_loss));
    CHECK(std::isfinite(e.dev_loss));
  }
}

TEST_CASE("training is deterministic and returns the best-dev snapshot") {
  auto store = toy_store();
  auto tr = toy_set(120, 0.6, 7, "t"), dv = toy_set(40, 0.6, 8, "d");
  TrainConfig c;
  c.epochs = 4;
  c.batch_size = 8;
  auto m1 = Classifier::create(toy_model(Architecture::LstmAttention), store);
  auto m2 = Classifier::create(toy_model(Architecture::LstmAttention), store);
  auto r1 = train(m1, tr, dv, store, c);
  auto r2 = train(m2, tr, dv, store, c);
  CHECK(snapshot(m1) == snapshot(m2));
  REQUIRE(r1.history.size() == r2.history.size());
  for (std::size_t i = 0; i < r1.history.size(); ++i) CHECK(r1.history[i].dev_loss == r2.history[i].dev_loss);
  double best = r1.history[0].dev_loss;
  for (const auto& e : r1.history) best = std::min(best, e.dev_loss);
  CHECK(r1.history[r1.best_epoch].dev_loss == best);
  CHECK(evaluate(m1, dv, store).report.mean_loss == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("dev items never reach a gradient step") {
  auto store = toy_store();
  auto tr = toy_set(50, 0.5, 9, "t"), dv = toy_set(20, 0.5, 10, "d");
  std::set<std::string> dev_ids;
  for (const auto& u : dv) dev_ids.insert(u.id);
  std::size_t seen = 0;
  bool leaked = false;
  TrainHooks hooks;
  hooks.on_batch = [&](std::span<const std::string> ids) {
    for (const auto& id : ids) {
      leaked |= dev_ids.contains(id);
      ++seen;
    }
  };
  auto m = Classifier::create(toy_model(), store);
  TrainConfig c;
  c.epochs = 3;
  train(m, tr, dv, store, c, hooks);
  CHECK_FALSE(leaked);
  CHECK(seen == 150);

  auto overlap = dv;
  overlap[0].id = tr[0].id;
  CHECK_THROWS_AS(train(m, tr, overlap, store, c), IntegrityError);
}

TEST_CASE("non-finite loss raises a training error naming the step") {
  auto store = toy_store();
  auto tr = toy_set(80, 0.5, 11, "t"), dv = toy_set(20, 0.5, 12, "d");
  auto m = Classifier::create(toy_model(), store);
  TrainConfig c;
  c.batch_size = 4;
  try {
    train(m, poisoned(tr), dv, store, c);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
}

TEST_CASE("LR range test") {
  auto store = toy_store();
  auto data = toy_set(400, 0.5, 13, "t", true);
  auto dv = toy_set(80, 0.5, 14, "d", true);
  ModelFactory factory = [&] { return Classifier::create(toy_model(), store); };
  auto r1 = lr_range_test(factory, data, store, 1e-4, 10.0, 200, 16, 3);
  auto r2 = lr_range_test(factory, data, store, 1e-4, 10.0, 200, 16, 3);
  REQUIRE(!r1.curve.empty());
  for (std::size_t i = 1; i < r1.curve.size(); ++i) CHECK(r1.curve[i].lr > r1.curve[i - 1].lr);
  REQUIRE(r1.curve.size() == r2.curve.size());
  for (std::size_t i = 0; i < r1.curve.size(); ++i) {
    CHECK(r1.curve[i].lr == r2.curve[i].lr);
    CHECK(r1.curve[i].smoothed == r2.curve[i].smoothed);
  }
  CHECK(r1.suggested_lr_min == doctest::Approx(r1.suggested_lr_max / 100.0));
  CHECK(r1.suggested_lr_max > 0.0);

  // the suggested range trains the separable set to low dev loss within 10 epochs
  auto m = factory();
  TrainConfig c;
  c.lr_max = r1.suggested_lr_max;
  c.lr_min = r1.suggested_lr_min;
  c.epochs = 10;
  c.batch_size = 16;
  auto rep = train(m, data, dv, store, c);
  MESSAGE("suggested lr_max " << r1.suggested_lr_max << ", dev loss " << rep.history[rep.best_epoch].dev_loss);
  CHECK(rep.history[rep.best_epoch].dev_loss < 0.1);

  CHECK_THROWS_AS(lr_range_test(factory, data, store, 1e-4, 10.0, 49), ContractError);
  // random labels: a huge first step cannot help, so the loss jumps at once
  auto noise = data;
  Rng flip(99);
  for (auto& u : noise) u.label = uniform01(flip) < 0.5 ? Label::DD : Label::NDD;
  CHECK_THROWS_AS(lr_range_test(factory, noise, store, 1e200, 1e300, 60, 16), RangeError);
}

TEST_CASE("transfer training") {
  auto store = toy_store();
  auto pre = toy_set(150, 0.5, 15, "p"), pre_dv = toy_set(40, 0.5, 16, "pd");
  auto ft = toy_set(60, 0.5, 17, "f"), ft_dv = toy_set(30, 0.5, 18, "fd");
  ModelFactory factory = [&] { return Classifier::create(toy_model(), store); };
  TrainConfig cp;
  cp.lr_max = 0.5;
  cp.epochs = 3;
  TrainConfig cf;
  cf.lr_max = 0.1;
  cf.lr_min = 0.001;
  cf.epochs = 0;

  auto res = transfer_train(factory, pre, pre_dv, ft, ft_dv, store, cp, cf);
  auto alone = factory();
  TrainConfig cp_plain = cp;
  cp_plain.phase = Phase::Pretrain;
  train(alone, pre, pre_dv, store, cp_plain);
  CHECK(snapshot(res.model) == snapshot(alone));
  CHECK(res.pretrain.phase == Phase::Pretrain);
  CHECK(res.finetune.phase == Phase::Finetune);
  CHECK(res.finetune.history.empty());

  cf.epochs = 2;
  auto res2 = transfer_train(factory, pre, pre_dv, ft, ft_dv, store, cp, cf);
  CHECK(res2.finetune.history.size() == 2);
  CHECK(snapshot(res2.model) != snapshot(alone));

  TrainConfig bad = cf;
  bad.lr_max = 1.0;
  CHECK_THROWS_AS(transfer_train(factory, pre, pre_dv, ft, ft_dv, store, cp, bad), ConfigError);

  try {
    transfer_train(factory, poisoned(pre), pre_dv, ft, ft_dv, store, cp, cf);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).starts_with("[pretrain]"));
  }
  try {
    transfer_train(factory, pre, pre_dv, poisoned(ft), ft_dv, store, cp, cf);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).starts_with("[finetune]"));
  }
}

TEST_CASE("report serialization") {
  TrainReport r;
  r.history.push_back({0, 0.5, 0.4, 12.5});
  r.history.push_back({1, 0.3, 0.35, 10.0});
  std::ostringstream out;
  write_report(out, r);
  const std::string s = out.str();
  CHECK(std::count(s.begin(), s.end(), '\n') == 2);
  CHECK(s.find("\"dev_eer\"") != std::string::npos);
}
