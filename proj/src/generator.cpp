#include "ddsd/generator.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "ddsd/errors.hpp"
#include "ddsd/rng.hpp"
#include "ddsd/text.hpp"

namespace ddsd {

namespace {

struct Topic {
  const char* name;
  std::vector<std::string> commands;
  std::vector<std::string> fragments;
};

const std::map<std::string, std::vector<std::string>>& slots() {
  static const std::map<std::string, std::vector<std::string>> s = {
      {"when", {"today", "tomorrow", "tonight", "this weekend", "on friday", "next week"}},
      {"city", {"boston", "seattle", "paris", "london", "denver", "chicago"}},
      {"item", {"bananas", "chicken", "milk", "eggs", "bread", "coffee", "apples", "rice", "paper towels",
                "batteries"}},
      {"artist", {"adele", "beyonce", "queen", "coldplay", "drake", "taylor swift"}},
      {"genre", {"jazz", "rock", "classical", "country", "pop"}},
      {"num", {"five", "ten", "fifteen", "twenty", "thirty"}},
      {"time", {"six am", "seven thirty", "noon", "eight pm"}},
      {"task", {"call mom", "take my pills", "feed the cat", "water the plants"}},
      {"room", {"kitchen", "bedroom", "living room", "hallway"}},
      {"device", {"fan", "tv", "heater", "lamp"}},
      {"temp", {"sixty eight", "seventy", "seventy two"}},
      {"person", {"adele", "the president", "einstein", "serena williams"}},
      {"country", {"france", "japan", "brazil", "canada"}},
      {"word", {"necessary", "rhythm", "receive"}},
      {"quality", {"unique", "smart", "happy"}},
      {"name", {"priya", "okonkwo", "dmitri", "xiomara", "takeshi", "bartholomew", "leif", "ngozi"}},
      {"thing", {"pills", "keys", "phone", "homework", "jacket", "remote"}},
      {"pron", {"she", "he", "they"}},
      {"verb", {"reorder", "order", "take", "find", "finish", "forget"}},
      {"act", {"go home", "clean up", "call grandma", "finish dinner"}},
  };
  return s;
}

const std::vector<Topic>& topics() {
  static const std::vector<Topic> t = {
      {"weather",
       {"what's the weather {when}", "will it rain {when}", "how cold is it {when}",
        "what's the temperature in {city}", "is it going to snow in {city} {when}",
        "do i need an umbrella {when}", "tell me the forecast for {city}"},
       {"and for {when}", "what about {city}", "and {city}", "how about {when}", "and in {city}"}},
      {"shopping",
       {"add {item} to my shopping list", "put {item} on the list", "order more {item}",
        "what's on my shopping list", "remove {item} from my list", "reorder {item}"},
       {"add {item}", "and {item}", "also {item}", "{item} too", "and some {item}"}},
      {"music",
       {"play {artist}", "play some {genre} music", "play the new album by {artist}", "turn up the volume",
        "skip this song", "who sings this song", "shuffle my {genre} playlist", "play songs by {artist}"},
       {"louder", "the next one", "something by {artist}", "more {genre}", "a little louder"}},
      {"timer",
       {"set a timer for {num} minutes", "set an alarm for {time}", "how much time is left on my timer",
        "cancel my {time} alarm", "wake me up at {time}", "remind me to {task} at {time}"},
       {"make it {num} minutes", "and another for {num} minutes", "actually {time}", "for {num} minutes"}},
      {"home",
       {"turn on the {room} lights", "turn off the {device}", "dim the {room} lights",
        "set the thermostat to {temp} degrees", "lock the front door", "is the garage door open"},
       {"and the {room}", "the {room} too", "a bit warmer", "now the {device}", "make it {temp}"}},
      {"info",
       {"who is {person}", "how tall is {person}", "what's the capital of {country}", "how far is the moon",
        "what time is it in {city}", "tell me a joke", "how do you spell {word}", "are you {quality}"},
       {"how old is she", "and {country}", "tell me another one", "are you one of a kind",
        "what about {person}"}},
      {"call",
       {"call {name}", "send a message to {name}", "text {name} that i'm on my way", "read my messages",
        "call {name} on speaker"},
       {"on her mobile", "and {name}", "tell {name} i'm late", "try again"}},
  };
  return t;
}

const std::vector<std::string>& chatter() {
  static const std::vector<std::string> c = {
      "did you {verb} your {thing}",
      "i don't know what {pron} just ordered",
      "well you got {num} more hours",
      "mom what did you say",
      "what are you doing",
      "{pron} said {pron} would be late",
      "can you pass me the {thing}",
      "i think we should {act} {when}",
      "where did you put the {thing}",
      "are you coming to dinner",
      "we need to leave in {num} minutes",
      "i told you to {act}",
      "hey did you see that",
      "oh my god that's so funny",
      "no i'm not going {when}",
      "it's just flashing yellow",
      "did {pron} {verb} the {thing} {when}",
  };
  return c;
}

const char* const kWakeword = "computer";

const std::set<std::string>& function_words() {
  static const std::set<std::string> f = {"the", "a",  "to", "my", "and", "is", "in", "for", "of",
                                          "at",  "on", "by", "me", "it",  "you", "i", "what's", "what",
                                          "how", "do", "are", "that", "this", "some", "more", "an"};
  return f;
}

std::vector<std::string> expand(const std::string& tmpl, Rng& rng) {
  std::vector<std::string> out;
  for (const auto& tok : split_tokens(tmpl)) {
    if (tok.size() > 2 && tok.front() == '{' && tok.back() == '}') {
      const auto& values = slots().at(tok.substr(1, tok.size() - 2));
      const auto& v = values[std::uniform_int_distribution<std::size_t>(0, values.size() - 1)(rng)];
      for (auto& w : split_tokens(v)) out.push_back(std::move(w));
    } else {
      out.push_back(tok);
    }
  }
  return out;
}

template <class T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}

std::size_t pick_topic(Rng& rng) {
  return std::uniform_int_distribution<std::size_t>(0, topics().size() - 1)(rng);
}

std::size_t pick_other_topic(std::size_t not_this, Rng& rng) {
  const std::size_t k = std::uniform_int_distribution<std::size_t>(0, topics().size() - 2)(rng);
  return k >= not_this ? k + 1 : k;
}

std::vector<std::string> command(std::size_t topic, Rng& rng) { return expand(pick(topics()[topic].commands, rng), rng); }

std::vector<std::string> salad(Rng& rng) {
  if (uniform01(rng) < 0.7) {
    std::vector<std::string> base;
    do {
      base = command(pick_topic(rng), rng);
    } while (base.size() < 3);
    std::vector<std::string> shuffled = base;
    for (int tries = 0; tries < 20 && shuffled == base; ++tries) std::shuffle(shuffled.begin(), shuffled.end(), rng);
    return shuffled;
  }
  std::vector<std::string> a = command(pick_topic(rng), rng);
  // Splices draw only on DD material (commands and follow-up fragments), so
  // salad never introduces words that DD items lack.
  auto piece = [&rng] {
    const std::size_t t = pick_topic(rng);
    return uniform01(rng) < 0.5 ? command(t, rng) : expand(pick(topics()[t].fragments, rng), rng);
  };
  std::vector<std::string> b = piece();
  while (a.size() < 2) a = command(pick_topic(rng), rng);
  while (b.size() < 2) b = piece();
  const std::size_t keep_a = std::uniform_int_distribution<std::size_t>(1, a.size() - 1)(rng);
  const std::size_t from_b = std::uniform_int_distribution<std::size_t>(1, b.size() - 1)(rng);
  std::vector<std::string> out(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(keep_a));
  out.insert(out.end(), b.begin() + static_cast<std::ptrdiff_t>(from_b), b.end());
  return out;
}

double quantize(double c) { return std::round(std::clamp(c, 0.0, 1.0) * 1e4) / 1e4; }

std::vector<double> confidences(std::size_t n, BetaParams p, Rng& rng) {
  std::vector<double> out(n);
  for (auto& c : out) c = quantize(beta_sample(rng, p.a, p.b));
  return out;
}

enum class Pop : std::uint8_t { Ambiguous, Command, Contextual, Distractor, Unstructured, Background };

struct Plan {
  Pop pop;
  Label label;
  std::size_t amb_index = 0;
};

std::size_t weighted(const std::vector<AmbiguousText>& table, Rng& rng) {
  double total = 0.0;
  for (const auto& a : table) total += a.weight;
  double u = uniform01(rng) * total;
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (u < table[i].weight) return i;
    u -= table[i].weight;
  }
  return table.size() - 1;
}

std::vector<Plan> plan_partition(const GeneratorSpec& spec, std::size_t n, Rng& rng) {
  const double r = spec.dd_ndd_ratio;
  const auto n_dd = static_cast<std::size_t>(std::llround(static_cast<double>(n) * r / (r + 1.0)));
  const std::size_t n_ndd = n - n_dd;
  const auto n_amb = static_cast<std::size_t>(std::llround(static_cast<double>(n) * spec.ambiguous_fraction));

  // Ambiguous labels are drawn from the table priors. A draw that leaves one
  // class over budget (likely only for small partitions) is redrawn.
  constexpr int kMaxDraws = 1000;
  std::vector<Plan> plan;
  std::size_t amb_dd = 0;
  std::size_t amb_ndd = 0;
  for (int attempt = 0;; ++attempt) {
    plan.clear();
    plan.reserve(n);
    amb_dd = 0;
    for (std::size_t i = 0; i < n_amb; ++i) {
      const std::size_t k = weighted(spec.ambiguity_table, rng);
      const auto& row = spec.ambiguity_table[k];
      const Label l = uniform01(rng) < row.p_dd / (row.p_dd + row.p_ndd) ? Label::DD : Label::NDD;
      if (l == Label::DD) ++amb_dd;
      plan.push_back({Pop::Ambiguous, l, k});
    }
    amb_ndd = n_amb - amb_dd;
    if (amb_dd <= n_dd && amb_ndd <= n_ndd) break;
    if (attempt + 1 == kMaxDraws) {
      throw ConfigError("ambiguous items alone exceed the class budget (" + std::to_string(amb_dd) + " DD / " +
                        std::to_string(amb_ndd) + " NDD for targets " + std::to_string(n_dd) + " / " +
                        std::to_string(n_ndd) + "); lower ambiguous_fraction");
    }
  }
  const std::size_t rest_dd = n_dd - amb_dd;
  const std::size_t rest_ndd = n_ndd - amb_ndd;
  const auto n_ctx = static_cast<std::size_t>(std::llround(static_cast<double>(rest_dd) * spec.contextual_fraction));
  const auto n_uns = static_cast<std::size_t>(std::llround(static_cast<double>(rest_ndd) * spec.unstructured_fraction));
  const auto n_dis = std::min(rest_ndd - n_uns, static_cast<std::size_t>(std::llround(
                                                    static_cast<double>(rest_ndd) * spec.distractor_fraction)));
  for (std::size_t i = 0; i < rest_dd; ++i) plan.push_back({i < n_ctx ? Pop::Contextual : Pop::Command, Label::DD});
  for (std::size_t i = 0; i < rest_ndd; ++i) {
    const Pop p = i < n_uns ? Pop::Unstructured : i < n_uns + n_dis ? Pop::Distractor : Pop::Background;
    plan.push_back({p, Label::NDD});
  }
  std::shuffle(plan.begin(), plan.end(), rng);
  return plan;
}

Utterance realize(const GeneratorSpec& spec, const Plan& p, Rng& rng) {
  Utterance u;
  u.label = p.label;
  const bool first_turn = spec.mode == GeneratorMode::FirstTurn;
  const BetaParams own = p.label == Label::DD ? spec.dd_conf : spec.ndd_conf;
  const BetaParams other = p.label == Label::DD ? spec.ndd_conf : spec.dd_conf;
  BetaParams conf = uniform01(rng) < spec.confidence_confusion ? other : own;
  std::size_t prev_topic = pick_topic(rng);

  switch (p.pop) {
    case Pop::Ambiguous:
      u.cur_tokens = split_tokens(spec.ambiguity_table[p.amb_index].text);
      break;
    case Pop::Command: {
      u.cur_tokens = command(pick_topic(rng), rng);
      break;
    }
    case Pop::Contextual: {
      const std::size_t t = pick_topic(rng);
      prev_topic = t;
      u.cur_tokens = first_turn ? command(t, rng) : expand(pick(topics()[t].fragments, rng), rng);
      break;
    }
    case Pop::Distractor: {
      const std::size_t t = pick_topic(rng);
      prev_topic = pick_other_topic(t, rng);
      u.cur_tokens = first_turn ? expand(pick(chatter(), rng), rng) : expand(pick(topics()[t].fragments, rng), rng);
      conf = uniform01(rng) < spec.distractor_clear ? spec.dd_conf : spec.ndd_conf;
      break;
    }
    case Pop::Unstructured:
      u.cur_tokens = salad(rng);
      conf = uniform01(rng) < spec.unstructured_clear ? spec.dd_conf : spec.ndd_conf;
      break;
    case Pop::Background:
      u.cur_tokens = expand(pick(chatter(), rng), rng);
      if (conf.a == spec.ndd_conf.a && conf.b == spec.ndd_conf.b) conf = spec.background_conf;
      break;
  }
  if (first_turn && p.pop != Pop::Ambiguous) u.cur_tokens.insert(u.cur_tokens.begin(), kWakeword);
  u.cur_confidences = confidences(u.cur_tokens.size(), conf, rng);
  if (!first_turn && spec.with_prev) {
    u.prev_tokens = command(prev_topic, rng);
    u.prev_tokens.insert(u.prev_tokens.begin(), kWakeword);
  }
  return u;
}

std::vector<Utterance> make_partition(const GeneratorSpec& spec, std::size_t n, std::uint64_t stream,
                                      std::string_view prefix, bool keep_labels) {
  Rng rng(mix_seed(spec.seed, stream));
  const auto plan = plan_partition(spec, n, rng);
  std::vector<Utterance> out;
  out.reserve(n);
  const std::size_t width = std::max<std::size_t>(6, std::to_string(n).size());
  for (std::size_t i = 0; i < plan.size(); ++i) {
    Utterance u = realize(spec, plan[i], rng);
    std::string num = std::to_string(i);
    u.id = std::string(prefix) + std::string(width - num.size(), '0') + num;
    if (!keep_labels) u.label.reset();
    out.push_back(std::move(u));
  }
  return out;
}

void check_fraction(double v, const char* name) {
  if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string(name) + " must be in [0,1]");
}

}  // namespace

std::vector<AmbiguousText> default_ambiguity_table() {
  return {{"thank you", 93.2, 6.8},  {"stop", 44.8, 55.2}, {"okay", 45.8, 55.2},       {"cancel", 70.7, 29.3},
          {"what", 32.6, 67.4},      {"next", 62.8, 37.2}, {"good night", 61.6, 38.4}, {"play", 36.8, 63.2}};
}

void GeneratorSpec::validate() const {
  check_fraction(ambiguous_fraction, "ambiguous_fraction");
  check_fraction(contextual_fraction, "contextual_fraction");
  check_fraction(unstructured_fraction, "unstructured_fraction");
  check_fraction(distractor_fraction, "distractor_fraction");
  check_fraction(confidence_confusion, "confidence_confusion");
  check_fraction(unstructured_clear, "unstructured_clear");
  check_fraction(distractor_clear, "distractor_clear");
  if (unstructured_fraction + distractor_fraction > 1.0 + 1e-12) {
    throw ConfigError("unstructured_fraction + distractor_fraction must not exceed 1");
  }
  if (!(dd_ndd_ratio > 0.0) || !std::isfinite(dd_ndd_ratio)) throw ConfigError("dd_ndd_ratio must be positive");
  if (ambiguous_fraction > 0.0 && ambiguity_table.empty()) throw ConfigError("ambiguity table is empty");
  for (const auto& a : ambiguity_table) {
    if (split_tokens(a.text).empty()) throw ConfigError("ambiguity table has an empty text");
    if (!(a.p_dd >= 0.0 && a.p_ndd >= 0.0 && a.p_dd + a.p_ndd > 0.0) || !(a.weight > 0.0)) {
      throw ConfigError("bad ambiguity table row '" + a.text + "'");
    }
  }
  for (const BetaParams& b : {dd_conf, ndd_conf, background_conf}) {
    if (!(b.a > 0.0 && b.b > 0.0)) throw ConfigError("beta parameters must be positive");
  }
  if (mode == GeneratorMode::FollowUp && !with_prev && (contextual_fraction > 0.0 || distractor_fraction > 0.0)) {
    throw ConfigError("contextual and distractor items need previous turns (with_prev)");
  }
}

std::vector<std::string> generator_preset_names() {
  return {"followup", "ambiguity", "contextual", "structure", "first-turn", "ssl"};
}

GeneratorSpec generator_preset(std::string_view name) {
  GeneratorSpec s;
  if (name == "followup" || name == "ambiguity") return s;
  if (name == "contextual") {
    s.ambiguous_fraction = 0.1;
    s.contextual_fraction = 0.4;
    s.unstructured_fraction = 0.1;
    s.distractor_fraction = 0.7;
    return s;
  }
  if (name == "structure") {
    s.ambiguous_fraction = 0.1;
    s.contextual_fraction = 0.0;
    s.unstructured_fraction = 0.8;
    s.distractor_fraction = 0.0;
    s.unstructured_clear = 0.8;
    return s;
  }
  if (name == "first-turn") {
    s.mode = GeneratorMode::FirstTurn;
    s.ambiguous_fraction = 0.1;
    s.contextual_fraction = 0.0;
    s.distractor_fraction = 0.0;
    s.with_prev = false;
    return s;
  }
  if (name == "ssl") {
    s.with_prev = false;
    s.contextual_fraction = 0.0;
    s.distractor_fraction = 0.0;
    return s;
  }
  throw ConfigError("unknown generator preset '" + std::string(name) + "'");
}

Corpus generate(const GeneratorSpec& spec) {
  spec.validate();
  Corpus c;
  struct Part {
    std::size_t n;
    Partition p;
    const char* prefix;
  };
  const Part parts[] = {{spec.n_train, Partition::Train, "tr"},
                        {spec.n_dev, Partition::Dev, "dv"},
                        {spec.n_test, Partition::Test, "te"},
                        {spec.n_unlabeled, Partition::Unlabeled, "un"}};
  for (std::size_t k = 0; k < 4; ++k) {
    if (parts[k].n == 0) continue;
    auto items = make_partition(spec, parts[k].n, k, parts[k].prefix, parts[k].p != Partition::Unlabeled);
    for (auto& u : items) {
      c.partition_map[u.id] = parts[k].p;
      c.utterances.push_back(std::move(u));
    }
  }
  c.validate();
  return c;
}

std::vector<Utterance> generate_items(const GeneratorSpec& spec, std::size_t n, std::string_view id_prefix) {
  spec.validate();
  return make_partition(spec, n, 100, id_prefix, true);
}

std::vector<std::string> grammar_vocabulary() {
  std::set<std::string> v;
  auto add_template = [&](const std::string& t) {
    for (const auto& tok : split_tokens(t)) {
      if (tok.front() != '{') v.insert(tok);
    }
  };
  for (const auto& t : topics()) {
    for (const auto& c : t.commands) add_template(c);
    for (const auto& f : t.fragments) add_template(f);
  }
  for (const auto& c : chatter()) add_template(c);
  for (const auto& [k, values] : slots()) {
    for (const auto& val : values) add_template(val);
  }
  for (const auto& a : default_ambiguity_table()) add_template(a.text);
  v.insert(kWakeword);
  return {v.begin(), v.end()};
}

std::vector<std::string> oov_tokens() { return slots().at("name"); }

SyntheticVectors synthetic_vectors(std::size_t dim, std::uint64_t seed) {
  if (dim == 0) throw ConfigError("vector dimension must be positive");
  // Cluster ids: one per topic, then chatter, ambiguous, function words.
  std::map<std::string, std::size_t> cluster;
  const std::size_t n_topics = topics().size();
  auto assign = [&](const std::string& text, std::size_t c) {
    for (const auto& tok : split_tokens(text)) {
      if (tok.front() == '{') {
        for (const auto& val : slots().at(tok.substr(1, tok.size() - 2))) {
          for (const auto& w : split_tokens(val)) cluster.emplace(w, c);
        }
      } else {
        cluster.emplace(tok, c);
      }
    }
  };
  for (const auto& w : function_words()) cluster.emplace(w, n_topics + 2);
  for (std::size_t t = 0; t < n_topics; ++t) {
    for (const auto& c : topics()[t].commands) assign(c, t);
    for (const auto& f : topics()[t].fragments) assign(f, t);
  }
  for (const auto& c : chatter()) assign(c, n_topics);
  for (const auto& a : default_ambiguity_table()) assign(a.text, n_topics + 1);
  cluster.emplace(kWakeword, n_topics + 2);

  const auto oov = oov_tokens();
  SyntheticVectors out;
  for (const auto& w : grammar_vocabulary()) {
    if (std::find(oov.begin(), oov.end(), w) == oov.end()) out.words.push_back(w);
  }
  Rng rng(mix_seed(seed, 0x7665));
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
  num::Matrix centroids(n_topics + 3, dim);
  for (double& v : centroids.values()) v = normal(rng);
  out.table = num::Matrix(out.words.size(), dim);
  for (std::size_t i = 0; i < out.words.size(); ++i) {
    const auto c = centroids.row(cluster.at(out.words[i]));
    auto row = out.table.row(i);
    for (std::size_t j = 0; j < dim; ++j) row[j] = 0.8 * c[j] + 0.6 * normal(rng);
  }
  return out;
}

AcousticScorer confidence_scorer(const GeneratorSpec& spec) {
  const BetaParams dd = spec.dd_conf;
  const BetaParams ndd = spec.ndd_conf;
  auto log_beta_pdf = [](double x, BetaParams p) {
    return (p.a - 1.0) * std::log(x) + (p.b - 1.0) * std::log1p(-x) -
           (std::lgamma(p.a) + std::lgamma(p.b) - std::lgamma(p.a + p.b));
  };
  return [dd, ndd, log_beta_pdf](const Utterance& u) {
    double llr = 0.0;
    for (double c : u.cur_confidences) {
      const double x = std::clamp(c, 1e-4, 1.0 - 1e-4);
      llr += log_beta_pdf(x, dd) - log_beta_pdf(x, ndd);
    }
    llr = std::clamp(llr, -5.0, 5.0);
    return 1.0 / (1.0 + std::exp(-llr));
  };
}

}  // namespace ddsd
