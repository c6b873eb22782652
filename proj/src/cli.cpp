#include "ddsd/cli.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "ddsd/ablation.hpp"
#include "ddsd/corpus.hpp"
#include "ddsd/embeddings.hpp"
#include "ddsd/errors.hpp"
#include "ddsd/evaluation.hpp"
#include "ddsd/generator.hpp"
#include "ddsd/models.hpp"
#include "ddsd/numerics/kernels.hpp"
#include "ddsd/ssl.hpp"
#include "ddsd/text.hpp"
#include "ddsd/training.hpp"

namespace ddsd::cli {

namespace fs = std::filesystem;

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
    throw Error("sha256 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ParseError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string hash_path(const fs::path& path) {
  if (!fs::is_directory(path)) return sha256_hex(read_file(path));
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(path)) {
    if (e.is_regular_file() && e.path().filename() != "manifest.txt") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::string acc;
  for (const auto& f : files) acc += f.filename().string() + ' ' + sha256_hex(read_file(f)) + '\n';
  return sha256_hex(acc);
}

std::vector<std::pair<std::string, std::string>> read_key_values(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open config file " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) throw ParseError(path.string(), n, "expected key=value");
    out.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  return out;
}

namespace {

using Log = std::function<void(const std::string&)>;

struct ModelOpts {
  std::string arch = "lstm-attn";
  std::size_t hidden = 150;
  std::size_t layers = 3;
  std::string features = "c,p,t";
};

struct TrainOpts {
  double lr_max = 0.5;
  double lr_min = 0.005;
  std::string decay = "linear";
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double clip_norm = 5.0;
};

struct VectorOpts {
  std::string path;
  std::size_t limit = 0;  // 0: whole file
};

void add_model_options(CLI::App* s, ModelOpts& m) {
  s->add_option("--model", m.arch, "Architecture: avg-dnn, lstm, lstm-attn");
  s->add_option("--hidden", m.hidden, "Hidden units per layer");
  s->add_option("--layers", m.layers, "LSTM layers");
  s->add_option("--features", m.features, "Feature set: c,p,t or an ablation such as -p");
}

void add_train_options(CLI::App* s, TrainOpts& t, const std::string& prefix = "") {
  s->add_option("--" + prefix + "lr-max", t.lr_max, "Initial learning rate");
  s->add_option("--" + prefix + "lr-min", t.lr_min, "Final learning rate");
  s->add_option("--" + prefix + "decay", t.decay, "linear or exponential");
  s->add_option("--" + prefix + "epochs", t.epochs, "Training epochs");
  s->add_option("--" + prefix + "batch-size", t.batch_size, "Minibatch size");
  s->add_option("--" + prefix + "clip-norm", t.clip_norm, "Global gradient-norm clip (0 disables)");
}

void add_vector_options(CLI::App* s, VectorOpts& v, bool required) {
  auto* o = s->add_option("--vectors", v.path, "Word vector file (text .vec format)");
  if (required) o->required();
  s->add_option("--vector-limit", v.limit, "Read at most this many vectors (0: all)");
}

TrainConfig to_train_config(const TrainOpts& t, std::uint64_t seed) {
  TrainConfig c;
  c.lr_max = t.lr_max;
  c.lr_min = t.lr_min;
  c.decay = parse_decay(t.decay);
  c.epochs = t.epochs;
  c.batch_size = t.batch_size;
  c.seed = seed;
  if (t.clip_norm > 0.0) {
    c.clip_norm = t.clip_norm;
  } else {
    c.clip_norm.reset();
  }
  c.validate();
  return c;
}

ModelConfig to_model_config(const ModelOpts& m, const EmbeddingStore& store, std::uint64_t seed) {
  ModelConfig c;
  c.arch = parse_architecture(m.arch);
  c.embed_dim = store.dim();
  c.hidden = m.hidden;
  c.layers = m.layers;
  c.seed = seed;
  c.features = parse_feature_code(m.features);
  return c;
}

EmbeddingStore load_store(const VectorOpts& v, std::uint64_t seed) {
  return EmbeddingStore::load_vectors(v.path, v.limit ? std::optional<std::size_t>(v.limit) : std::nullopt, seed);
}

// What a command read and wrote; becomes the manifest.
struct RunRecord {
  std::string command;
  CLI::App* sub = nullptr;
  std::vector<std::pair<std::string, std::string>> inputs;
  std::vector<fs::path> outputs;
};

void write_manifest(const fs::path& where, const RunRecord& run) {
  std::ofstream out(where, std::ios::binary);
  if (!out) throw IntegrityError("cannot write " + where.string());
  out << "command=" << run.command << '\n';
  for (const CLI::Option* o : run.sub->get_options()) {
    const std::string name = o->get_single_name();
    if (name.empty() || name == "help" || name == "config") continue;
    std::string value;
    if (o->get_expected_min() == 0) {
      value = o->count() > 0 ? (o->as<bool>() ? "true" : "false") : "false";
    } else if (o->count() > 0) {
      value = o->results().back();
    } else {
      value = o->get_default_str();
    }
    if (value.empty()) continue;
    out << name << '=' << value << '\n';
  }
  out << "kernels=" << num::kernels::backend_name(num::kernels::active_backend()) << '\n';
  for (const auto& [k, h] : run.inputs) out << "input." << k << ".sha256=" << h << '\n';
  for (const auto& p : run.outputs) out << "output." << p.filename().string() << ".sha256=" << hash_path(p) << '\n';
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IntegrityError("cannot write " + p.string());
  out << s;
}

template <class F>
void write_with(const fs::path& p, F&& f) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IntegrityError("cannot write " + p.string());
  f(out);
  if (!out) throw IntegrityError("write failed for " + p.string());
}

void write_scores(std::ostream& out, const std::vector<ScoredItem>& items) {
  for (const auto& it : items) out << it.id << '\t' << label_name(it.label) << '\t' << format_double(it.score) << '\n';
}

std::map<std::string, std::string> store_metadata(const VectorOpts& v, const std::string& vec_hash,
                                                  std::uint64_t seed) {
  return {{"vectors", fs::absolute(v.path).lexically_normal().string()},
          {"vectors_sha256", vec_hash},
          {"vectors_limit", std::to_string(v.limit)},
          {"store_seed", std::to_string(seed)}};
}

// Partitions a training command needs, loaded and checked before any output.
struct Splits {
  std::vector<Utterance> train, dev, test;
};

Splits require_splits(const Corpus& c, const std::string& path, bool need_test = true) {
  Splits s{c.select(Partition::Train), c.select(Partition::Dev), c.select(Partition::Test)};
  if (s.train.empty() || s.dev.empty() || (need_test && s.test.empty())) {
    throw IntegrityError("corpus " + path + " needs nonempty train, dev" + (need_test ? " and test" : "") +
                         " partitions");
  }
  return s;
}

Log make_log(std::ostream& err, const std::string& tag) {
  return [&err, tag](const std::string& msg) { err << '[' << tag << "] " << msg << '\n'; };
}

TrainHooks epoch_logger(const Log& log) {
  TrainHooks h;
  h.on_epoch = [log](const EpochRecord& e) {
    log("epoch " + std::to_string(e.epoch) + " train_loss " + format_fixed(e.train_loss, 4) + " dev_loss " +
        format_fixed(e.dev_loss, 4) + " dev_eer " + format_fixed(e.dev_eer, 2));
  };
  return h;
}

void write_eval_outputs(const fs::path& dir, const std::string& stem, const Evaluation& ev, RunRecord& run) {
  write_text(dir / (stem + "_eval.json"), to_json_line(ev.report) + '\n');
  write_with(dir / (stem + "_roc.tsv"), [&](std::ostream& o) { write_roc(o, ev.report); });
  write_with(dir / (stem + "_scores.tsv"), [&](std::ostream& o) { write_scores(o, ev.items); });
  run.outputs.push_back(dir / (stem + "_eval.json"));
  run.outputs.push_back(dir / (stem + "_roc.tsv"));
  run.outputs.push_back(dir / (stem + "_scores.tsv"));
}

// Loads the vectors a saved model was trained with. An explicit path wins;
// the content hash must still match.
EmbeddingStore store_for_model(const LoadedModel& lm, const std::string& explicit_path) {
  const auto& md = lm.metadata;
  auto get = [&](const char* k) -> std::string {
    auto it = md.find(k);
    return it == md.end() ? std::string() : it->second;
  };
  const std::string path = explicit_path.empty() ? get("vectors") : explicit_path;
  if (path.empty()) throw ConfigError("model has no recorded vector file; pass --vectors");
  const std::string want = get("vectors_sha256");
  if (!want.empty() && hash_path(path) != want) {
    throw IntegrityError("vector file " + path + " does not match the hash recorded in the model");
  }
  std::size_t limit = 0, seed = 0;
  const std::string ls = get("vectors_limit"), ss = get("store_seed");
  if (!ls.empty() && !parse_count(ls, limit)) throw ParseError("bad vectors_limit in model metadata");
  if (!ss.empty() && !parse_count(ss, seed)) throw ParseError("bad store_seed in model metadata");
  return EmbeddingStore::load_vectors(path, limit ? std::optional<std::size_t>(limit) : std::nullopt, seed);
}

}  // namespace

int dispatch(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Device-directed speech detection experiments", "ddsd"};
  app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  std::uint64_t seed = 1;
  std::string out_path;
  std::string config_path;
  auto common = [&](CLI::App* s, bool out_required = true) {
    s->add_option("--seed", seed, "Seed for every random choice");
    auto* o = s->add_option("--out", out_path, "Output directory");
    if (out_required) o->required();
    s->add_option("--config", config_path, "key=value file (e.g. a manifest); flags override it");
  };

  // gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic corpus and matching word vectors");
  std::string preset = "followup";
  std::optional<std::size_t> n_train, n_dev, n_test, n_unlabeled;
  std::optional<double> ratio, amb_frac, ctx_frac, uns_frac, dis_frac, confusion;
  std::size_t dim = 300;
  std::string amb_table;
  gen->add_option("--preset", preset, "followup, ambiguity, contextual, structure, first-turn, ssl");
  gen->add_option("--n-train", n_train);
  gen->add_option("--n-dev", n_dev);
  gen->add_option("--n-test", n_test);
  gen->add_option("--n-unlabeled", n_unlabeled);
  gen->add_option("--ratio", ratio, "DD:NDD ratio");
  gen->add_option("--ambiguous-fraction", amb_frac);
  gen->add_option("--contextual-fraction", ctx_frac);
  gen->add_option("--unstructured-fraction", uns_frac);
  gen->add_option("--distractor-fraction", dis_frac);
  gen->add_option("--confusion", confusion, "Probability of other-class confidences");
  gen->add_option("--ambiguity-table", amb_table, "TSV rows: text, p(DD), p(NDD)[, weight]");
  gen->add_option("--dim", dim, "Synthetic vector dimension");
  common(gen);

  // Model-training commands.
  ModelOpts mopt;
  TrainOpts topt, pre_topt;
  VectorOpts vopt;
  std::string corpus_path, pre_corpus_path;

  auto* lr = app.add_subcommand("lr-range", "Learning-rate range test");
  double lr_lo = 1e-4, lr_hi = 10.0;
  std::size_t lr_steps = 200;
  lr->add_option("--corpus", corpus_path)->required();
  add_vector_options(lr, vopt, true);
  add_model_options(lr, mopt);
  lr->add_option("--lr-lo", lr_lo);
  lr->add_option("--lr-hi", lr_hi);
  lr->add_option("--steps", lr_steps);
  lr->add_option("--batch-size", topt.batch_size);
  common(lr);

  auto* tr = app.add_subcommand("train", "Train a model from scratch");
  tr->add_option("--corpus", corpus_path)->required();
  add_vector_options(tr, vopt, true);
  add_model_options(tr, mopt);
  add_train_options(tr, topt);
  common(tr);

  auto* tt = app.add_subcommand("transfer-train", "Pretrain on first-turn data, then fine-tune");
  pre_topt.lr_max = 1.0;
  pre_topt.lr_min = 0.01;
  tt->add_option("--pretrain-corpus", pre_corpus_path)->required();
  tt->add_option("--corpus", corpus_path)->required();
  add_vector_options(tt, vopt, true);
  add_model_options(tt, mopt);
  add_train_options(tt, topt);
  add_train_options(tt, pre_topt, "pre-");
  common(tt);

  auto* ev = app.add_subcommand("eval", "Evaluate a saved model on a corpus partition");
  std::string model_path, partition = "test";
  ev->add_option("--model", model_path, "Model file")->required();
  ev->add_option("--corpus", corpus_path)->required();
  ev->add_option("--partition", partition, "train, dev or test");
  ev->add_option("--vectors", vopt.path, "Override the vector file recorded in the model");
  common(ev);

  auto* ab = app.add_subcommand("ablate", "Feature ablation: c,p,t / -c / -p / -t");
  ab->add_option("--corpus", corpus_path)->required();
  add_vector_options(ab, vopt, true);
  add_model_options(ab, mopt);
  add_train_options(ab, topt);
  common(ab);

  auto* sl = app.add_subcommand("ssl", "Self-teaching with pseudo-labels from fused scores");
  SslConfig scfg;
  bool dump_pools = false;
  sl->add_option("--corpus", corpus_path)->required();
  add_vector_options(sl, vopt, true);
  add_train_options(sl, topt);
  ModelOpts ssl_mopt{"lstm", 150, 3, "-p"};
  add_model_options(sl, ssl_mopt);
  sl->add_option("--dd-quantile", scfg.dd_quantile);
  sl->add_option("--ndd-quantile", scfg.ndd_quantile);
  sl->add_option("--max-passes", scfg.max_passes);
  sl->add_option("--patience", scfg.patience);
  sl->add_option("--fusion-weight", scfg.fusion_weight);
  sl->add_option("--fusion-gamma", scfg.fusion_gamma);
  sl->add_flag("--dump-pools", dump_pools, "Write the labeled pool after every pass");
  common(sl);

  auto* pr = app.add_subcommand("predict", "Score utterances with a saved model");
  std::string input_path;
  pr->add_option("--model", model_path, "Model file")->required();
  pr->add_option("--input", input_path, "Utterance records")->required();
  pr->add_option("--vectors", vopt.path, "Override the vector file recorded in the model");
  common(pr, false);
  pr->get_option("--out")->description("Score file (default: standard output)");

  // Config file: splice its keys in front of the user's flags so that the
  // flags win (TakeLast).
  std::vector<std::string> args = raw_args;
  try {
    if (!args.empty() && args[0].rfind("--", 0) != 0) {
      std::string cfg_file;
      for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) cfg_file = args[i + 1];
        if (args[i].rfind("--config=", 0) == 0) cfg_file = args[i].substr(9);
      }
      if (!cfg_file.empty()) {
        std::vector<std::string> injected;
        for (const auto& [k, v] : read_key_values(cfg_file)) {
          if (k == "command") {
            if (v != args[0]) throw ConfigError("config " + cfg_file + " is for '" + v + "', not '" + args[0] + "'");
            continue;
          }
          if (k == "kernels" || k.find('.') != std::string::npos || v.empty()) continue;
          injected.push_back("--" + k + "=" + v);
        }
        args.insert(args.begin() + 1, injected.begin(), injected.end());
      }
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  RunRecord run;
  try {
    if (gen->parsed()) {
      run = {"gen-corpus", gen, {}, {}};
      GeneratorSpec spec = generator_preset(preset);
      spec.seed = seed;
      if (n_train) spec.n_train = *n_train;
      if (n_dev) spec.n_dev = *n_dev;
      if (n_test) spec.n_test = *n_test;
      if (n_unlabeled) spec.n_unlabeled = *n_unlabeled;
      if (ratio) spec.dd_ndd_ratio = *ratio;
      if (amb_frac) spec.ambiguous_fraction = *amb_frac;
      if (ctx_frac) spec.contextual_fraction = *ctx_frac;
      if (uns_frac) spec.unstructured_fraction = *uns_frac;
      if (dis_frac) spec.distractor_fraction = *dis_frac;
      if (confusion) spec.confidence_confusion = *confusion;
      if (!amb_table.empty()) {
        spec.ambiguity_table.clear();
        std::ifstream in(amb_table, std::ios::binary);
        if (!in) throw ParseError("cannot open " + amb_table);
        std::string line;
        std::size_t n = 0;
        while (std::getline(in, line)) {
          ++n;
          if (line.empty() || line[0] == '#') continue;
          const auto f = split_char(line, '\t');
          AmbiguousText row;
          if ((f.size() != 3 && f.size() != 4) || !parse_double(f[1], row.p_dd) || !parse_double(f[2], row.p_ndd) ||
              (f.size() == 4 && !parse_double(f[3], row.weight))) {
            throw ParseError(amb_table, n, "expected text<TAB>p_dd<TAB>p_ndd[<TAB>weight]");
          }
          row.text = std::string(f[0]);
          spec.ambiguity_table.push_back(row);
        }
        run.inputs.emplace_back("ambiguity-table", hash_path(amb_table));
      }
      const Corpus corpus = generate(spec);
      const SyntheticVectors vecs = synthetic_vectors(dim, seed);
      const fs::path dir = out_path;
      save_corpus(corpus, dir);
      write_vectors(dir / "vectors.vec", vecs.words, vecs.table);
      run.outputs = {dir / "utterances.tsv", dir / "partitions.tsv", dir / "vectors.vec"};
      write_manifest(dir / "manifest.txt", run);
      out << "train " << corpus.count(Partition::Train) << " dev " << corpus.count(Partition::Dev) << " test "
          << corpus.count(Partition::Test) << " unlabeled " << corpus.count(Partition::Unlabeled) << '\n';
      return 0;
    }

    if (lr->parsed()) {
      run = {"lr-range", lr, {}, {}};
      const Corpus corpus = load_corpus(corpus_path);
      const auto data = corpus.select(Partition::Train);
      if (data.empty()) throw IntegrityError("corpus " + corpus_path + " has no train partition");
      const EmbeddingStore store = load_store(vopt, seed);
      const ModelConfig mc = to_model_config(mopt, store, seed);
      run.inputs = {{"corpus", hash_path(corpus_path)}, {"vectors", hash_path(vopt.path)}};
      const auto result = lr_range_test([&] { return Classifier::create(mc, store); }, data, store, lr_lo, lr_hi,
                                        lr_steps, topt.batch_size, seed);
      const fs::path dir = out_path;
      fs::create_directories(dir);
      write_with(dir / "lr_range.tsv", [&](std::ostream& o) {
        o << "lr\tloss\tsmoothed\n";
        for (const auto& p : result.curve) {
          o << format_double(p.lr) << '\t' << format_double(p.loss) << '\t' << format_double(p.smoothed) << '\n';
        }
      });
      nlohmann::ordered_json j;
      j["lr_max"] = result.suggested_lr_max;
      j["lr_min"] = result.suggested_lr_min;
      j["stopped_early"] = result.stopped_early;
      j["steps_run"] = result.curve.size();
      write_text(dir / "suggestion.json", j.dump() + '\n');
      run.outputs = {dir / "lr_range.tsv", dir / "suggestion.json"};
      write_manifest(dir / "manifest.txt", run);
      out << "suggested lr_max " << format_double(result.suggested_lr_max) << " lr_min "
          << format_double(result.suggested_lr_min) << '\n';
      return 0;
    }

    if (tr->parsed() || ab->parsed()) {
      const bool ablate = ab->parsed();
      run = {ablate ? "ablate" : "train", ablate ? ab : tr, {}, {}};
      const Corpus corpus = load_corpus(corpus_path);
      const Splits splits = require_splits(corpus, corpus_path);
      const EmbeddingStore store = load_store(vopt, seed);
      const std::string vec_hash = hash_path(vopt.path);
      const ModelConfig mc = to_model_config(mopt, store, seed);
      const TrainConfig tc = to_train_config(topt, seed);
      run.inputs = {{"corpus", hash_path(corpus_path)}, {"vectors", vec_hash}};
      const fs::path dir = out_path;
      const Log log = make_log(err, run.command);
      if (ablate) {
        const auto rows = run_ablation(corpus, store, mc, tc, log);
        fs::create_directories(dir);
        write_with(dir / "ablation.tsv", [&](std::ostream& o) { write_ablation_tsv(o, rows); });
        run.outputs = {dir / "ablation.tsv"};
        write_manifest(dir / "manifest.txt", run);
        write_ablation_table(out, rows);
        return 0;
      }
      Classifier model = Classifier::create(mc, store);
      const TrainReport report = train(model, splits.train, splits.dev, store, tc, epoch_logger(log));
      const Evaluation test = evaluate(model, splits.test, store);
      fs::create_directories(dir);
      save_model(dir / "model.ddsd", model, store_metadata(vopt, vec_hash, seed));
      write_with(dir / "history.jsonl", [&](std::ostream& o) { write_report(o, report); });
      run.outputs = {dir / "model.ddsd", dir / "history.jsonl"};
      write_eval_outputs(dir, "test", test, run);
      write_manifest(dir / "manifest.txt", run);
      out << "best epoch " << report.best_epoch << " test EER " << format_fixed(test.report.eer, 1) << '\n';
      return 0;
    }

    if (tt->parsed()) {
      run = {"transfer-train", tt, {}, {}};
      const Corpus pre_corpus = load_corpus(pre_corpus_path);
      const Splits pre = require_splits(pre_corpus, pre_corpus_path, false);
      const Corpus corpus = load_corpus(corpus_path);
      const Splits ft = require_splits(corpus, corpus_path);
      const EmbeddingStore store = load_store(vopt, seed);
      const std::string vec_hash = hash_path(vopt.path);
      const ModelConfig mc = to_model_config(mopt, store, seed);
      const TrainConfig cfg_ft = to_train_config(topt, seed);
      const TrainConfig cfg_pre = to_train_config(pre_topt, seed);
      if (cfg_pre.lr_max < cfg_ft.lr_max) throw ConfigError("--pre-lr-max must be >= --lr-max");
      run.inputs = {{"pretrain-corpus", hash_path(pre_corpus_path)},
                    {"corpus", hash_path(corpus_path)},
                    {"vectors", vec_hash}};
      const Log log = make_log(err, "transfer-train");
      auto result = transfer_train([&] { return Classifier::create(mc, store); }, pre.train, pre.dev, ft.train,
                                   ft.dev, store, cfg_pre, cfg_ft, epoch_logger(log));
      const Evaluation test = evaluate(result.model, ft.test, store);
      const fs::path dir = out_path;
      fs::create_directories(dir);
      save_model(dir / "model.ddsd", result.model, store_metadata(vopt, vec_hash, seed));
      write_with(dir / "pretrain.jsonl", [&](std::ostream& o) { write_report(o, result.pretrain); });
      write_with(dir / "finetune.jsonl", [&](std::ostream& o) { write_report(o, result.finetune); });
      run.outputs = {dir / "model.ddsd", dir / "pretrain.jsonl", dir / "finetune.jsonl"};
      write_eval_outputs(dir, "test", test, run);
      write_manifest(dir / "manifest.txt", run);
      out << "test EER " << format_fixed(test.report.eer, 1) << '\n';
      return 0;
    }

    if (ev->parsed()) {
      run = {"eval", ev, {}, {}};
      const auto part = parse_partition(partition);
      if (!part || *part == Partition::Unlabeled) throw ConfigError("--partition must be train, dev or test");
      const LoadedModel lm = load_model(model_path);
      const EmbeddingStore store = store_for_model(lm, vopt.path);
      const Corpus corpus = load_corpus(corpus_path);
      const auto data = corpus.select(*part);
      if (data.empty()) throw IntegrityError("partition " + partition + " of " + corpus_path + " is empty");
      run.inputs = {{"model", hash_path(model_path)}, {"corpus", hash_path(corpus_path)}};
      const Evaluation result = evaluate(lm.model, data, store);
      const fs::path dir = out_path;
      fs::create_directories(dir);
      write_eval_outputs(dir, partition, result, run);
      write_manifest(dir / "manifest.txt", run);
      out << to_json_line(result.report) << '\n';
      return 0;
    }

    if (sl->parsed()) {
      run = {"ssl", sl, {}, {}};
      const Corpus corpus = load_corpus(corpus_path);
      const Splits splits = require_splits(corpus, corpus_path);
      std::vector<UnlabeledUtterance> pool;
      for (auto& u : corpus.select(Partition::Unlabeled)) pool.emplace_back(std::move(u));
      if (pool.empty()) throw IntegrityError("corpus " + corpus_path + " has no unlabeled partition");
      const EmbeddingStore store = load_store(vopt, seed);
      const std::string vec_hash = hash_path(vopt.path);
      const ModelConfig mc = to_model_config(ssl_mopt, store, seed);
      const TrainConfig tc = to_train_config(topt, seed);
      scfg.validate();
      run.inputs = {{"corpus", hash_path(corpus_path)}, {"vectors", vec_hash}};
      const fs::path dir = out_path;
      const Log log = make_log(err, "ssl");
      SslHooks hooks;
      hooks.warn = [log](const std::string& w) { log("warning: " + w); };
      hooks.on_pass = [&](const SslState& s) {
        const auto& h = s.history.back();
        log("pass " + std::to_string(h.pass) + " dev_loss " + format_fixed(h.dev_loss, 4) + " test_eer " +
            format_fixed(h.test_eer, 2) + " labeled " + std::to_string(h.labeled_size));
        if (dump_pools) {
          fs::create_directories(dir / "pools");
          save_records(dir / "pools" / ("pass_" + std::to_string(h.pass) + ".tsv"), s.labeled);
        }
      };
      const GeneratorSpec acoustic_model;  // default confidence model
      auto result = ssl_run([&] { return Classifier::create(mc, store); }, splits.train, pool, splits.dev,
                            splits.test, store, confidence_scorer(acoustic_model), scfg, tc, hooks);
      const Evaluation test = evaluate(result.model, splits.test, store);
      fs::create_directories(dir);
      write_with(dir / "history.jsonl", [&](std::ostream& o) { write_history(o, result.state.history); });
      save_model(dir / "model.ddsd", result.model, store_metadata(vopt, vec_hash, seed));
      run.outputs = {dir / "history.jsonl", dir / "model.ddsd"};
      write_eval_outputs(dir, "test", test, run);
      write_manifest(dir / "manifest.txt", run);
      out << "selected pass " << result.state.selected_pass << " test EER " << format_fixed(test.report.eer, 1)
          << " (pass 0: " << format_fixed(result.state.history.front().test_eer, 1) << ")\n";
      return 0;
    }

    if (pr->parsed()) {
      run = {"predict", pr, {}, {}};
      const LoadedModel lm = load_model(model_path);
      const EmbeddingStore store = store_for_model(lm, vopt.path);
      const auto items = load_records(input_path);
      std::vector<FeatureSequence> feats;
      feats.reserve(items.size());
      for (const auto& u : items) feats.push_back(lm.model.features(u, store));
      const auto scores = feats.empty() ? std::vector<double>{} : lm.model.score(feats);
      std::ostringstream body;
      for (double s : scores) body << format_double(s) << '\n';
      if (out_path.empty()) {
        out << body.str();
        return 0;
      }
      run.inputs = {{"model", hash_path(model_path)}, {"input", hash_path(input_path)}};
      const fs::path path = out_path;
      if (path.has_parent_path()) fs::create_directories(path.parent_path());
      write_text(path, body.str());
      run.outputs = {path};
      write_manifest(path.string() + ".manifest.txt", run);
      return 0;
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace ddsd::cli
