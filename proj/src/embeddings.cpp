#include "ddsd/embeddings.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string_view>

#include "ddsd/errors.hpp"
#include "ddsd/rng.hpp"
#include "ddsd/text.hpp"

namespace ddsd {

std::string_view label_name(Label l) { return l == Label::DD ? "DD" : "NDD"; }

void Utterance::validate() const {
  if (cur_tokens.empty()) throw ContractError("utterance '" + id + "': empty current turn");
  if (cur_confidences.size() != cur_tokens.size()) {
    throw ContractError("utterance '" + id + "': " + std::to_string(cur_confidences.size()) +
                        " confidences for " + std::to_string(cur_tokens.size()) + " tokens");
  }
  auto in_range = [](double c) { return c >= 0.0 && c <= 1.0; };
  for (double c : cur_confidences) {
    if (!in_range(c)) throw ContractError("utterance '" + id + "': confidence outside [0,1]");
  }
  if (prev_confidences) {
    if (prev_confidences->size() != prev_tokens.size()) {
      throw ContractError("utterance '" + id + "': previous-turn confidences misaligned");
    }
    for (double c : *prev_confidences) {
      if (!in_range(c)) throw ContractError("utterance '" + id + "': confidence outside [0,1]");
    }
  }
}

EmbeddingStore EmbeddingStore::load_vectors(const std::filesystem::path& path,
                                            std::optional<std::size_t> limit, std::uint64_t seed) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open vector file " + path.string());
  const std::string source = path.string();

  EmbeddingStore store;
  std::string line;
  std::size_t line_no = 0;
  bool seen_content = false;
  std::vector<std::string_view> fields;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    split_whitespace(line, fields);
    if (fields.empty()) continue;
    if (!seen_content) {
      seen_content = true;
      std::size_t n = 0, d = 0;
      if (fields.size() == 2 && parse_count(fields[0], n) && parse_count(fields[1], d)) {
        if (d == 0) throw ParseError(source, line_no, "header declares dimension 0");
        store.dim_ = d;
        continue;
      }
    }
    if (limit && store.words_.size() >= *limit) break;
    const std::size_t d = fields.size() - 1;
    if (d == 0) throw ParseError(source, line_no, "token without vector");
    if (store.dim_ == 0) store.dim_ = d;
    if (d != store.dim_) {
      throw ParseError(source, line_no,
                       "expected " + std::to_string(store.dim_) + " values, found " + std::to_string(d));
    }
    std::string token(fields[0]);
    if (store.index_.contains(token)) continue;
    const std::size_t base = store.table_.size();
    store.table_.resize(base + d);
    for (std::size_t i = 0; i < d; ++i) {
      if (!parse_double(fields[i + 1], store.table_[base + i])) {
        throw ParseError(source, line_no, "bad number '" + std::string(fields[i + 1]) + "'");
      }
    }
    store.index_.emplace(token, store.words_.size());
    store.words_.push_back(std::move(token));
  }
  if (!seen_content || store.dim_ == 0) throw ParseError(source, line_no, "empty vector file");
  store.init_specials(seed);
  return store;
}

EmbeddingStore EmbeddingStore::from_table(std::vector<std::string> words, const num::Matrix& vectors,
                                          std::uint64_t seed) {
  if (words.size() != vectors.rows()) throw DimensionError("word count does not match vector rows");
  if (vectors.cols() == 0) throw DimensionError("embedding dimension must be positive");
  EmbeddingStore store;
  store.dim_ = vectors.cols();
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (store.index_.contains(words[i])) continue;
    store.index_.emplace(words[i], store.words_.size());
    store.words_.push_back(words[i]);
    const auto row = vectors.row(i);
    store.table_.insert(store.table_.end(), row.begin(), row.end());
  }
  store.init_specials(seed);
  return store;
}

void EmbeddingStore::init_specials(std::uint64_t seed) {
  // Specials get the per-component spread of the pre-trained table.
  double sq = 0.0;
  for (double v : table_) sq += v * v;
  const double sd = table_.empty() ? 0.1 : std::sqrt(sq / static_cast<double>(table_.size()));
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, sd > 0.0 ? sd : 0.1);
  for (auto& vec : specials_) {
    vec.resize(dim_);
    for (double& v : vec) v = normal(rng);
  }
}

std::span<const double> EmbeddingStore::lookup(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) return special(SpecialToken::Oov);
  return vector_at(it->second);
}

std::span<const double> EmbeddingStore::vector_at(std::size_t i) const {
  if (i >= words_.size()) throw ContractError("vector index out of range");
  return {table_.data() + i * dim_, dim_};
}

std::span<const double> EmbeddingStore::special(SpecialToken t) const {
  return specials_[static_cast<std::size_t>(t)];
}

void EmbeddingStore::set_special(SpecialToken t, std::span<const double> v) {
  if (v.size() != dim_) throw DimensionError("special vector has wrong dimension");
  specials_[static_cast<std::size_t>(t)].assign(v.begin(), v.end());
}

void write_vectors(const std::filesystem::path& path, std::span<const std::string> words,
                   const num::Matrix& vectors) {
  if (words.size() != vectors.rows()) throw DimensionError("word count does not match vector rows");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << words.size() << ' ' << vectors.cols() << '\n';
  for (std::size_t i = 0; i < words.size(); ++i) {
    out << words[i];
    for (double v : vectors.row(i)) out << ' ' << format_double(v);
    out << '\n';
  }
  if (!out) throw Error("write failed for " + path.string());
}

std::string FeatureOptions::code() const {
  if (use_cur_text && use_prev && use_conf) return "c,p,t";
  std::string out;
  auto append = [&out](const char* s) {
    if (!out.empty()) out += ',';
    out += s;
  };
  if (!use_cur_text) append("-c");
  if (!use_prev) append("-p");
  if (!use_conf) append("-t");
  return out;
}

FeatureOptions parse_feature_code(std::string_view code) {
  FeatureOptions f;
  if (code == "c,p,t" || code == "full") return f;
  auto bad = [&] { return ConfigError("bad feature code '" + std::string(code) + "'"); };
  const auto parts = split_char(code, ',');
  if (parts.empty()) throw bad();
  // Either a list of included letters ("c,t") or of removals ("-p,-t").
  const bool inclusive = !parts.front().starts_with('-');
  if (inclusive) f = FeatureOptions{false, false, false};
  for (auto part : parts) {
    if (part.starts_with('-') == inclusive) throw bad();
    if (!inclusive) part.remove_prefix(1);
    bool* slot = part == "c" ? &f.use_cur_text : part == "p" ? &f.use_prev : part == "t" ? &f.use_conf : nullptr;
    if (slot == nullptr) throw bad();
    *slot = inclusive;
  }
  return f;
}

FeatureSequence assemble(const Utterance& u, const EmbeddingStore& store,
                         const FeatureOptions& options) {
  u.validate();
  const std::size_t d = store.dim();
  const bool with_prev = options.use_prev && !u.prev_tokens.empty();
  const std::size_t frames = (with_prev ? 1 + u.prev_tokens.size() : 0) + 1 + u.cur_tokens.size();

  FeatureSequence seq;
  seq.frames = num::Matrix(frames, d + 1);
  seq.mask.assign(frames, true);
  seq.slots.reserve(frames);

  std::size_t t = 0;
  auto put = [&](std::span<const double> emb, FrameSlot slot, double conf) {
    auto row = seq.frames.row(t);
    std::copy(emb.begin(), emb.end(), row.begin());
    row[d] = options.use_conf ? conf : 1.0;
    seq.slots.push_back(slot);
    ++t;
  };
  auto put_token = [&](const std::string& token, double conf) {
    if (store.contains(token)) {
      put(store.lookup(token), FrameSlot::Vocab, conf);
    } else {
      put(store.special(SpecialToken::Oov), FrameSlot::Oov, conf);
    }
  };

  if (with_prev) {
    put(store.special(SpecialToken::SepPrev), FrameSlot::SepPrev, 1.0);
    for (std::size_t i = 0; i < u.prev_tokens.size(); ++i) {
      put_token(u.prev_tokens[i], u.prev_confidences ? (*u.prev_confidences)[i] : 1.0);
    }
  }
  put(store.special(SpecialToken::SepCur), FrameSlot::SepCur, 1.0);
  const std::vector<double> zeros(d, 0.0);
  for (std::size_t i = 0; i < u.cur_tokens.size(); ++i) {
    if (options.use_cur_text) {
      put_token(u.cur_tokens[i], u.cur_confidences[i]);
    } else {
      put(zeros, FrameSlot::Blank, u.cur_confidences[i]);
    }
  }
  return seq;
}

}  // namespace ddsd
