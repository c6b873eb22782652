#include "ddsd/ssl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "json.hpp"

#include "ddsd/errors.hpp"

namespace ddsd {

void SslConfig::validate() const {
  if (!(dd_quantile > 0.0 && dd_quantile < 1.0) || !(ndd_quantile > 0.0 && ndd_quantile < 1.0)) {
    throw ConfigError("quantiles must be in (0,1)");
  }
  if (dd_quantile + ndd_quantile > 1.0) throw ConfigError("quantiles sum to more than 1");
  if (!(fusion_weight >= 0.0 && fusion_weight <= 1.0)) throw ConfigError("fusion_weight must be in [0,1]");
  if (!(fusion_gamma > 0.0) || !std::isfinite(fusion_gamma)) throw ConfigError("fusion_gamma must be positive");
  if (patience == 0) throw ConfigError("patience must be positive");
}

double compress_acoustic(double a, double gamma) {
  const double d = 2.0 * a - 1.0;
  const double m = std::pow(std::abs(d), gamma) / 2.0;
  return d < 0.0 ? 0.5 - m : 0.5 + m;
}

double fuse_scores(double lex_score, double ac_score, const SslConfig& cfg) {
  if (!(lex_score >= 0.0 && lex_score <= 1.0) || !(ac_score >= 0.0 && ac_score <= 1.0)) {
    throw ContractError("fuse_scores inputs must be in [0,1]");
  }
  const double w = cfg.fusion_weight;
  if (w == 0.0) return lex_score;
  return (1.0 - w) * lex_score + w * compress_acoustic(ac_score, cfg.fusion_gamma);
}

PseudoCounts pseudo_label_counts(std::size_t pool, const SslConfig& cfg) {
  PseudoCounts c;
  c.ndd = static_cast<std::size_t>(std::floor(cfg.ndd_quantile * static_cast<double>(pool)));
  c.dd = static_cast<std::size_t>(std::llround(static_cast<double>(c.ndd) * cfg.dd_quantile / cfg.ndd_quantile));
  if (c.dd + c.ndd > pool) c = {};
  return c;
}

std::optional<std::string> prior_ratio_warning(std::span<const Utterance> labeled, const SslConfig& cfg) {
  std::size_t dd = 0, ndd = 0;
  for (const auto& u : labeled) {
    if (u.label) (*u.label == Label::DD ? dd : ndd)++;
  }
  if (dd == 0 || ndd == 0) return "labeled set is single-class";
  const double prior = static_cast<double>(dd) / static_cast<double>(ndd);
  const double q = cfg.dd_quantile / cfg.ndd_quantile;
  if (std::abs(q / prior - 1.0) > 0.1) {
    return "quantile ratio " + std::to_string(q) + " differs from the labeled DD:NDD ratio " +
           std::to_string(prior) + " by more than 10%";
  }
  return std::nullopt;
}

std::size_t select_model(std::span<const double> dev_losses) {
  if (dev_losses.empty()) throw ContractError("select_model needs a nonempty history");
  std::size_t best = 0;
  for (std::size_t i = 1; i < dev_losses.size(); ++i) {
    if (dev_losses[i] < dev_losses[best]) best = i;
  }
  return best;
}

std::size_t select_model(const SslState& state) {
  std::vector<double> losses;
  for (const auto& h : state.history) losses.push_back(h.dev_loss);
  return select_model(losses);
}

void write_history(std::ostream& out, std::span<const PassRecord> history) {
  for (const auto& h : history) {
    nlohmann::ordered_json j;
    j["pass"] = h.pass;
    j["dev_loss"] = h.dev_loss;
    j["test_eer"] = h.test_eer;
    j["added_dd"] = h.added_dd;
    j["added_ndd"] = h.added_ndd;
    out << j.dump() << '\n';
  }
}

SslResult ssl_run(const ModelFactory& factory, std::span<const Utterance> labeled,
                  std::span<const UnlabeledUtterance> unlabeled, std::span<const Utterance> dev,
                  std::span<const Utterance> test, const EmbeddingStore& store,
                  const AcousticScorer& acoustic, const SslConfig& cfg, const TrainConfig& train_cfg,
                  const SslHooks& hooks) {
  cfg.validate();
  {
    std::unordered_set<std::string> ids;
    auto claim = [&](const std::string& id, const char* where) {
      if (!ids.insert(id).second) throw IntegrityError("id '" + id + "' appears twice (seen again in " + where + ")");
    };
    for (const auto& u : labeled) claim(u.id, "labeled");
    for (const auto& u : unlabeled) claim(u.id(), "unlabeled");
    for (const auto& u : dev) claim(u.id, "dev");
    for (const auto& u : test) claim(u.id, "test");
  }
  if (hooks.warn) {
    if (auto w = prior_ratio_warning(labeled, cfg)) hooks.warn(*w);
  }

  SslState state;
  state.labeled.assign(labeled.begin(), labeled.end());
  state.unlabeled.assign(unlabeled.begin(), unlabeled.end());
  std::optional<Classifier> best_model;
  double best_loss = INFINITY;
  std::size_t since_best = 0;
  PseudoCounts added;

  for (std::size_t pass = 0;; ++pass) {
    Classifier model = factory();
    train(model, state.labeled, dev, store, train_cfg, hooks.train);
    const Evaluation dv = evaluate(model, dev, store);
    const Evaluation te = evaluate(model, test, store);
    state.history.push_back({pass, dv.report.mean_loss, te.report.eer, added.dd, added.ndd, state.labeled.size(),
                             state.unlabeled.size()});
    if (dv.report.mean_loss < best_loss) {
      best_loss = dv.report.mean_loss;
      best_model = model;
      since_best = 0;
    } else {
      ++since_best;
    }
    state.selected_pass = select_model(state);
    if (hooks.on_pass) hooks.on_pass(state);
    if (pass >= cfg.max_passes || since_best >= cfg.patience) break;

    added = pseudo_label_counts(state.unlabeled.size(), cfg);
    if (added.dd == 0 || added.ndd == 0) break;

    std::vector<FeatureSequence> feats;
    feats.reserve(state.unlabeled.size());
    for (const auto& u : state.unlabeled) feats.push_back(model.features(u.utterance(), store));
    const std::vector<double> lex = model.score(feats);
    std::vector<double> fused(state.unlabeled.size());
    for (std::size_t i = 0; i < fused.size(); ++i) {
      fused[i] = fuse_scores(lex[i], acoustic(state.unlabeled[i].utterance()), cfg);
    }
    std::vector<std::size_t> order(fused.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (fused[a] != fused[b]) return fused[a] < fused[b];
      return state.unlabeled[a].id() < state.unlabeled[b].id();
    });
    std::vector<char> taken(fused.size(), 0);
    for (std::size_t k = 0; k < added.ndd; ++k) {
      const std::size_t i = order[k];
      state.labeled.push_back(state.unlabeled[i].with_label(Label::NDD));
      taken[i] = 1;
    }
    for (std::size_t k = 0; k < added.dd; ++k) {
      const std::size_t i = order[order.size() - 1 - k];
      state.labeled.push_back(state.unlabeled[i].with_label(Label::DD));
      taken[i] = 1;
    }
    std::vector<UnlabeledUtterance> rest;
    rest.reserve(state.unlabeled.size());
    for (std::size_t i = 0; i < state.unlabeled.size(); ++i) {
      if (!taken[i]) rest.push_back(std::move(state.unlabeled[i]));
    }
    state.unlabeled = std::move(rest);
  }
  return SslResult{std::move(state), std::move(*best_model)};
}

}  // namespace ddsd
