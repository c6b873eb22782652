#include "ddsd/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ddsd/errors.hpp"
#include "ddsd/rng.hpp"
#include "ddsd/text.hpp"

namespace ddsd {

using num::Matrix;
using num::Parameter;
using num::Tape;
using num::Var;

std::string_view architecture_tag(Architecture a) {
  switch (a) {
    case Architecture::AvgDnn:
      return "avg-dnn";
    case Architecture::Lstm:
      return "lstm";
    case Architecture::LstmAttention:
      return "lstm-attn";
  }
  return "unknown";
}

Architecture parse_architecture(std::string_view tag) {
  if (tag == "avg-dnn") return Architecture::AvgDnn;
  if (tag == "lstm") return Architecture::Lstm;
  if (tag == "lstm-attn") return Architecture::LstmAttention;
  throw ConfigError("unknown architecture '" + std::string(tag) +
                    "' (expected avg-dnn, lstm or lstm-attn)");
}

double bce_loss(double p, Label y) {
  const double q = std::clamp(p, 1e-12, 1.0 - 1e-12);
  return y == Label::DD ? -std::log(q) : -std::log(1.0 - q);
}

namespace {

constexpr const char* kSpecialNames[kSpecialTokenCount] = {"emb.oov", "emb.sep_prev", "emb.sep_cur"};

FrameSlot slot_of(SpecialToken t) {
  switch (t) {
    case SpecialToken::Oov:
      return FrameSlot::Oov;
    case SpecialToken::SepPrev:
      return FrameSlot::SepPrev;
    case SpecialToken::SepCur:
      return FrameSlot::SepCur;
  }
  return FrameSlot::Vocab;
}

// Glorot/Xavier uniform over a rows×cols block of `m` starting at column c0.
void glorot(Matrix& m, std::size_t c0, std::size_t cols, std::size_t fan_in, std::size_t fan_out,
            Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = c0; c < c0 + cols; ++c) m(r, c) = dist(rng);
}

Parameter dense(std::string name, std::size_t in, std::size_t out, Rng& rng) {
  Parameter p{std::move(name), Matrix(in, out)};
  glorot(p.value, 0, out, in, out, rng);
  return p;
}

Parameter zeros(std::string name, std::size_t rows, std::size_t cols) {
  return Parameter{std::move(name), Matrix(rows, cols)};
}


}  // namespace

Batch make_batch(std::span<const FeatureSequence* const> seqs, std::span<const double> labels,
                 const std::array<bool, kSpecialTokenCount>& trainable_specials) {
  if (seqs.empty()) throw ContractError("empty batch");
  if (!labels.empty() && labels.size() != seqs.size()) {
    throw DimensionError("label count does not match batch size");
  }
  Batch b;
  b.size = seqs.size();
  b.width = seqs.front()->width();
  for (const FeatureSequence* s : seqs) {
    if (s->length() == 0) throw ContractError("empty feature sequence");
    if (s->width() != b.width) throw DimensionError("feature width mismatch within batch");
    b.steps = std::max(b.steps, s->length());
    b.lengths.push_back(s->length());
  }
  const std::size_t d = b.width - 1;
  b.frames = Matrix(b.steps * b.size, b.width);
  b.mask = Matrix(b.size, b.steps);
  for (std::size_t s = 0; s < kSpecialTokenCount; ++s) {
    if (!trainable_specials[s]) continue;
    const FrameSlot want = slot_of(static_cast<SpecialToken>(s));
    Matrix ind(b.steps * b.size, 1);
    bool used = false;
    for (std::size_t i = 0; i < b.size; ++i) {
      for (std::size_t t = 0; t < seqs[i]->length(); ++t) {
        if (seqs[i]->slots[t] == want) {
          ind(t * b.size + i, 0) = 1.0;
          used = true;
        }
      }
    }
    if (used) b.indicators[s] = std::move(ind);
  }
  for (std::size_t i = 0; i < b.size; ++i) {
    const FeatureSequence& seq = *seqs[i];
    for (std::size_t t = 0; t < seq.length(); ++t) {
      auto dst = b.frames.row(t * b.size + i);
      const auto src = seq.frames.row(t);
      std::copy(src.begin(), src.end(), dst.begin());
      const auto slot = seq.slots[t];
      for (std::size_t s = 0; s < kSpecialTokenCount; ++s) {
        if (trainable_specials[s] && slot == slot_of(static_cast<SpecialToken>(s))) {
          std::fill_n(dst.begin(), d, 0.0);
        }
      }
      b.mask(i, t) = 1.0;
    }
  }
  b.step_mask.reserve(b.steps);
  for (std::size_t t = 0; t < b.steps; ++t) {
    Matrix m(b.size, 1);
    Matrix inv(b.size, 1);
    bool full = true;
    for (std::size_t i = 0; i < b.size; ++i) {
      m(i, 0) = b.mask(i, t);
      inv(i, 0) = 1.0 - b.mask(i, t);
      full = full && b.mask(i, t) != 0.0;
    }
    b.step_mask.push_back(std::move(m));
    b.step_unmask.push_back(std::move(inv));
    b.step_full.push_back(full);
  }
  if (!labels.empty()) b.labels = Matrix(b.size, 1, std::vector<double>(labels.begin(), labels.end()));
  return b;
}

ForwardResult forward_avg_dnn(Tape& tape, Var frames, const Batch& batch, const AvgDnnModel& m) {
  if (frames.cols() != m.w1.value.rows()) {
    throw ContractError("AVG-DNN expects frames of width " + std::to_string(m.w1.value.rows()) +
                        ", got " + std::to_string(frames.cols()));
  }
  Var s = num::sequence_mean(frames, batch.size, batch.lengths);
  Var h = num::tanh(num::add(num::matmul(s, tape.parameter(m.w1)), tape.parameter(m.b1)));
  Var logits = num::add(num::matmul(h, tape.parameter(m.w2)), tape.parameter(m.b2));
  return {logits, {}};
}

ForwardResult forward_lstm(Tape& tape, Var frames, const Batch& batch, const LstmModel& m,
                           const AttentionHead* attn) {
  if (m.layers.empty()) throw ContractError("LSTM model without layers");
  if (frames.cols() != m.layers.front().wx.value.rows()) {
    throw ContractError("LSTM expects frames of width " +
                        std::to_string(m.layers.front().wx.value.rows()) + ", got " +
                        std::to_string(frames.cols()));
  }
  const std::size_t B = batch.size;
  const std::size_t T = batch.steps;
  const std::size_t H = m.layers.front().wh.value.rows();

  Var inputs = frames;
  std::vector<Var> hs(T);
  for (const LstmLayer& layer : m.layers) {
    // Input projection for all steps at once: (T·B)×4H.
    Var xw = num::add(num::matmul(inputs, tape.parameter(layer.wx)), tape.parameter(layer.b));
    Var wh = tape.parameter(layer.wh);
    Var h, c;
    for (std::size_t t = 0; t < T; ++t) {
      Var gates = num::slice_rows(xw, t * B, B);
      if (t > 0) gates = num::add(gates, num::matmul(h, wh));
      Var i_g = num::sigmoid(num::slice_cols(gates, 0, H));
      Var f_g = num::sigmoid(num::slice_cols(gates, H, H));
      Var g_g = num::tanh(num::slice_cols(gates, 2 * H, H));
      Var o_g = num::sigmoid(num::slice_cols(gates, 3 * H, H));
      Var c_new = num::mul(i_g, g_g);
      if (t > 0) c_new = num::add(num::mul(f_g, c), c_new);
      Var h_new = num::mul(o_g, num::tanh(c_new));
      if (t == 0 || batch.step_full[t]) {
        // Every sequence is at least one frame long, so step 0 is always full.
        c = c_new;
        h = h_new;
      } else {
        // Finished sequences carry their last state forward.
        Var keep = tape.external(batch.step_mask[t]);
        Var hold = tape.external(batch.step_unmask[t]);
        c = num::add(num::mul(c_new, keep), num::mul(c, hold));
        h = num::add(num::mul(h_new, keep), num::mul(h, hold));
      }
      hs[t] = h;
    }
    inputs = num::concat_rows(hs);
  }

  Var embedding;
  Var alpha;
  if (attn) {
    Var scores = num::tanh(num::add(num::matmul(inputs, tape.parameter(attn->wa)),
                                    tape.parameter(attn->ba)));
    std::vector<Var> cols(T);
    for (std::size_t t = 0; t < T; ++t) cols[t] = num::slice_rows(scores, t * B, B);
    alpha = num::softmax_rows(num::concat_cols(cols), batch.mask);
    for (std::size_t t = 0; t < T; ++t) {
      Var term = num::mul(hs[t], num::slice_cols(alpha, t, 1));
      embedding = t == 0 ? term : num::add(embedding, term);
    }
  } else {
    embedding = hs[T - 1];
  }
  Var dense = num::tanh(num::add(num::matmul(embedding, tape.parameter(m.wd)), tape.parameter(m.bd)));
  Var logits = num::add(num::matmul(dense, tape.parameter(m.wo)), tape.parameter(m.bo));
  return {logits, alpha};
}

namespace {

struct Builder {
  static void build(const ModelConfig& cfg, std::optional<AvgDnnModel>& avg,
                    std::optional<LstmModel>& lstm, std::optional<AttentionHead>& attn) {
    if (cfg.embed_dim == 0 || cfg.hidden == 0) throw ConfigError("model dimensions must be positive");
    Rng rng(cfg.seed);
    const std::size_t in = cfg.embed_dim + 1;
    const std::size_t H = cfg.hidden;
    if (cfg.arch == Architecture::AvgDnn) {
      AvgDnnModel m;
      m.w1 = dense("avg.w1", in, H, rng);
      m.b1 = zeros("avg.b1", 1, H);
      m.w2 = dense("avg.w2", H, 1, rng);
      m.b2 = zeros("avg.b2", 1, 1);
      avg = std::move(m);
      return;
    }
    if (cfg.layers == 0) throw ConfigError("LSTM needs at least one layer");
    LstmModel m;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      const std::size_t layer_in = l == 0 ? in : H;
      const std::string prefix = "lstm.l" + std::to_string(l);
      LstmLayer layer;
      layer.wx = Parameter{prefix + ".wx", Matrix(layer_in, 4 * H)};
      layer.wh = Parameter{prefix + ".wh", Matrix(H, 4 * H)};
      layer.b = zeros(prefix + ".b", 1, 4 * H);
      for (std::size_t g = 0; g < 4; ++g) {
        glorot(layer.wx.value, g * H, H, layer_in, H, rng);
        glorot(layer.wh.value, g * H, H, H, H, rng);
      }
      for (std::size_t j = H; j < 2 * H; ++j) layer.b.value(0, j) = 1.0;  // forget gate
      m.layers.push_back(std::move(layer));
    }
    m.wd = dense("lstm.dense.w", H, H, rng);
    m.bd = zeros("lstm.dense.b", 1, H);
    m.wo = dense("lstm.out.w", H, 1, rng);
    m.bo = zeros("lstm.out.b", 1, 1);
    lstm = std::move(m);
    if (cfg.arch == Architecture::LstmAttention) {
      AttentionHead a;
      a.wa = dense("attn.wa", H, 1, rng);
      a.ba = zeros("attn.ba", 1, 1);
      attn = std::move(a);
    }
  }
};

}  // namespace

Classifier Classifier::create(const ModelConfig& cfg, const EmbeddingStore& store) {
  if (cfg.embed_dim != store.dim()) {
    throw ContractError("model embed_dim " + std::to_string(cfg.embed_dim) +
                        " does not match embedding store dim " + std::to_string(store.dim()));
  }
  Classifier c;
  c.cfg_ = cfg;
  Builder::build(cfg, c.avg_, c.lstm_, c.attn_);
  for (std::size_t s = 0; s < kSpecialTokenCount; ++s) {
    if (!cfg.trainable_specials[s]) continue;
    c.specials_[s] = Parameter{kSpecialNames[s],
                               Matrix::row_vector(store.special(static_cast<SpecialToken>(s)))};
  }
  return c;
}

std::vector<Parameter*> Classifier::parameters() {
  std::vector<Parameter*> out;
  if (avg_) out.insert(out.end(), {&avg_->w1, &avg_->b1, &avg_->w2, &avg_->b2});
  if (lstm_) {
    for (auto& l : lstm_->layers) out.insert(out.end(), {&l.wx, &l.wh, &l.b});
    out.insert(out.end(), {&lstm_->wd, &lstm_->bd, &lstm_->wo, &lstm_->bo});
  }
  if (attn_) out.insert(out.end(), {&attn_->wa, &attn_->ba});
  for (auto& s : specials_) {
    if (s) out.push_back(&*s);
  }
  return out;
}

std::vector<const Parameter*> Classifier::parameters() const {
  auto mut = const_cast<Classifier*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

Parameter* Classifier::find_parameter(std::string_view name) {
  for (Parameter* p : parameters()) {
    if (p->name == name) return p;
  }
  return nullptr;
}

std::size_t Classifier::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += p->value.size();
  return n;
}

Var Classifier::input(Tape& tape, const Batch& batch) const {
  if (batch.width != cfg_.embed_dim + 1) {
    throw ContractError("batch width " + std::to_string(batch.width) + " does not match model input " +
                        std::to_string(cfg_.embed_dim + 1));
  }
  Var x = tape.external(batch.frames);
  for (std::size_t s = 0; s < kSpecialTokenCount; ++s) {
    if (!specials_[s] || !batch.indicators[s]) continue;
    const Var parts[] = {tape.parameter(*specials_[s]), tape.constant(Matrix(1, 1))};
    Var padded = num::concat_cols(parts);
    x = num::add(x, num::matmul(tape.external(*batch.indicators[s]), padded));
  }
  return x;
}

ForwardResult Classifier::forward(Tape& tape, const Batch& batch) const {
  Var x = input(tape, batch);
  if (avg_) return forward_avg_dnn(tape, x, batch, *avg_);
  return forward_lstm(tape, x, batch, *lstm_, attn_ ? &*attn_ : nullptr);
}

std::vector<double> Classifier::score(std::span<const FeatureSequence> seqs,
                                      std::size_t batch_size) const {
  std::vector<double> out;
  out.reserve(seqs.size());
  std::vector<const FeatureSequence*> ptrs;
  for (std::size_t start = 0; start < seqs.size(); start += batch_size) {
    const std::size_t end = std::min(seqs.size(), start + batch_size);
    ptrs.clear();
    for (std::size_t i = start; i < end; ++i) ptrs.push_back(&seqs[i]);
    const Batch b = batch(ptrs, {});
    Tape tape;
    const Matrix& z = forward(tape, b).logits.value();
    for (std::size_t i = 0; i < z.rows(); ++i) {
      const double v = z(i, 0);
      out.push_back(v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)));
    }
  }
  return out;
}

double Classifier::score(const FeatureSequence& seq) const {
  return score(std::span<const FeatureSequence>(&seq, 1)).front();
}

std::vector<double> Classifier::attention(const FeatureSequence& seq) const {
  if (!attn_) return {};
  const FeatureSequence* ptr = &seq;
  const Batch b = batch(std::span<const FeatureSequence* const>(&ptr, 1), {});
  Tape tape;
  const auto res = forward(tape, b);
  const auto row = res.attention.value().row(0);
  return {row.begin(), row.end()};
}

void Classifier::write_back(EmbeddingStore& store) const {
  for (std::size_t s = 0; s < kSpecialTokenCount; ++s) {
    if (specials_[s]) store.set_special(static_cast<SpecialToken>(s), specials_[s]->value.values());
  }
}

void save_model(const std::filesystem::path& path, const Classifier& model,
                const std::map<std::string, std::string>& metadata) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write model file " + path.string());
  const ModelConfig& cfg = model.cfg_;
  out << "ddsd-model 1\n";
  out << "architecture " << architecture_tag(cfg.arch) << '\n';
  out << "embed_dim " << cfg.embed_dim << '\n';
  out << "hidden " << cfg.hidden << '\n';
  out << "layers " << cfg.layers << '\n';
  out << "seed " << cfg.seed << '\n';
  out << "features " << cfg.features.code() << '\n';
  out << "trainable_specials";
  for (bool t : cfg.trainable_specials) out << ' ' << (t ? 1 : 0);
  out << '\n';
  for (const auto& [k, v] : metadata) {
    if (k.find_first_of(" \t\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw ContractError("model metadata key/value contains whitespace or newline");
    }
    out << "meta " << k << ' ' << v << '\n';
  }
  for (const Parameter* p : model.parameters()) {
    out << "param " << p->name << ' ' << p->value.rows() << ' ' << p->value.cols() << '\n';
    for (std::size_t r = 0; r < p->value.rows(); ++r) {
      const auto row = p->value.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) out << (c ? " " : "") << format_double(row[c]);
      out << '\n';
    }
  }
  out << "end\n";
  if (!out) throw Error("write failed for " + path.string());
}

LoadedModel load_model(const std::filesystem::path& path, std::optional<Architecture> expected) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open model file " + path.string());
  const std::string src = path.string();
  std::string line;
  std::size_t line_no = 0;
  auto next = [&](std::vector<std::string_view>& fields) {
    while (std::getline(in, line)) {
      ++line_no;
      split_whitespace(line, fields);
      if (!fields.empty()) return true;
    }
    return false;
  };
  std::vector<std::string_view> f;
  if (!next(f) || f.size() != 2 || f[0] != "ddsd-model" || f[1] != "1") {
    throw ParseError(src, line_no, "not a ddsd model file");
  }
  ModelConfig cfg;
  std::map<std::string, std::string> meta;
  auto expect_count = [&](std::string_view key, std::size_t& out) {
    if (!next(f) || f.size() != 2 || f[0] != key || !parse_count(f[1], out)) {
      throw ParseError(src, line_no, "expected '" + std::string(key) + " <count>'");
    }
  };
  if (!next(f) || f.size() != 2 || f[0] != "architecture") {
    throw ParseError(src, line_no, "expected 'architecture <tag>'");
  }
  cfg.arch = parse_architecture(f[1]);
  if (expected && *expected != cfg.arch) {
    throw ContractError("model file " + src + " holds architecture '" +
                        std::string(architecture_tag(cfg.arch)) + "', expected '" +
                        std::string(architecture_tag(*expected)) + "'");
  }
  expect_count("embed_dim", cfg.embed_dim);
  expect_count("hidden", cfg.hidden);
  expect_count("layers", cfg.layers);
  std::size_t seed = 0;
  expect_count("seed", seed);
  cfg.seed = seed;
  if (!next(f) || f.size() != 2 || f[0] != "features") throw ParseError(src, line_no, "expected features");
  try {
    cfg.features = parse_feature_code(f[1]);
  } catch (const ConfigError& e) {
    throw ParseError(src, line_no, e.what());
  }
  if (!next(f) || f.size() != 1 + kSpecialTokenCount || f[0] != "trainable_specials") {
    throw ParseError(src, line_no, "expected trainable_specials");
  }
  for (std::size_t s = 0; s < kSpecialTokenCount; ++s) cfg.trainable_specials[s] = f[1 + s] == "1";

  Classifier c;
  c.cfg_ = cfg;
  Builder::build(cfg, c.avg_, c.lstm_, c.attn_);
  for (std::size_t s = 0; s < kSpecialTokenCount; ++s) {
    if (cfg.trainable_specials[s]) c.specials_[s] = Parameter{kSpecialNames[s], Matrix(1, cfg.embed_dim)};
  }
  std::size_t loaded = 0;
  bool ended = false;
  while (next(f)) {
    if (f[0] == "end") {
      ended = true;
      break;
    }
    if (f[0] == "meta") {
      if (f.size() < 2) throw ParseError(src, line_no, "bad meta line");
      const auto pos = line.find(f[1]) + f[1].size();
      std::string value = pos < line.size() ? line.substr(pos + 1) : std::string();
      meta[std::string(f[1])] = value;
      continue;
    }
    std::size_t rows = 0, cols = 0;
    if (f[0] != "param" || f.size() != 4 || !parse_count(f[2], rows) || !parse_count(f[3], cols)) {
      throw ParseError(src, line_no, "expected 'param <name> <rows> <cols>'");
    }
    Parameter* p = c.find_parameter(f[1]);
    if (!p) throw ParseError(src, line_no, "unexpected parameter '" + std::string(f[1]) + "'");
    if (p->value.rows() != rows || p->value.cols() != cols) {
      throw ParseError(src, line_no, "parameter '" + p->name + "' has the wrong shape");
    }
    for (std::size_t r = 0; r < rows; ++r) {
      if (!next(f) || f.size() != cols) throw ParseError(src, line_no, "short parameter row");
      for (std::size_t k = 0; k < cols; ++k) {
        if (!parse_double(f[k], p->value(r, k))) throw ParseError(src, line_no, "bad number");
      }
    }
    ++loaded;
  }
  if (!ended) throw ParseError(src, line_no, "truncated model file");
  if (loaded != c.parameters().size()) throw ParseError(src, line_no, "missing parameters");
  return LoadedModel{std::move(c), std::move(meta)};
}

}  // namespace ddsd
