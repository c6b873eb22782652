#include "ddsd/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <unordered_set>

#include "ddsd/errors.hpp"
#include "ddsd/rng.hpp"
#include "ddsd/text.hpp"

namespace ddsd {

namespace fs = std::filesystem;

std::string_view partition_name(Partition p) {
  switch (p) {
    case Partition::Train:
      return "train";
    case Partition::Dev:
      return "dev";
    case Partition::Test:
      return "test";
    case Partition::Unlabeled:
      return "unlabeled";
  }
  return "unknown";
}

std::optional<Partition> parse_partition(std::string_view s) {
  for (Partition p : {Partition::Train, Partition::Dev, Partition::Test, Partition::Unlabeled}) {
    if (partition_name(p) == s) return p;
  }
  return std::nullopt;
}

namespace {

void write_confidences(std::ostream& out, const std::vector<double>& c) {
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (i) out << ' ';
    out << format_fixed(c[i], 4);
  }
}

std::vector<double> parse_confidences(std::string_view field, const std::string& source,
                                      std::size_t line) {
  std::vector<double> out;
  std::vector<std::string_view> parts;
  split_whitespace(field, parts);
  out.reserve(parts.size());
  for (auto p : parts) {
    double v = 0.0;
    if (!parse_double(p, v)) {
      throw ParseError(source, line, "bad confidence '" + std::string(p) + "'");
    }
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ParseError(source, line, "confidence " + std::string(p) + " outside [0,1]");
    }
    out.push_back(v);
  }
  return out;
}

Utterance parse_record(std::string_view text, const std::string& source, std::size_t line) {
  const auto fields = split_char(text, '\t');
  if (fields.size() != 5 && fields.size() != 6) {
    throw ParseError(source, line, "expected 5 or 6 tab-separated fields, got " +
                                       std::to_string(fields.size()));
  }
  Utterance u;
  u.id = std::string(fields[0]);
  if (u.id.empty()) throw ParseError(source, line, "empty id");
  if (u.id.find_first_of(" \r\n") != std::string::npos) {
    throw ParseError(source, line, "id contains whitespace");
  }
  if (fields[1] == "DD") {
    u.label = Label::DD;
  } else if (fields[1] == "NDD") {
    u.label = Label::NDD;
  } else if (fields[1] != "U") {
    throw ParseError(source, line, "label must be DD, NDD or U, got '" + std::string(fields[1]) + "'");
  }
  u.prev_tokens = split_tokens(fields[2]);
  u.cur_tokens = split_tokens(fields[3]);
  if (u.cur_tokens.empty()) throw ParseError(source, line, "empty current-turn tokens");
  u.cur_confidences = parse_confidences(fields[4], source, line);
  if (u.cur_confidences.size() != u.cur_tokens.size()) {
    throw ParseError(source, line, std::to_string(u.cur_confidences.size()) + " confidences for " +
                                       std::to_string(u.cur_tokens.size()) + " current-turn tokens");
  }
  if (fields.size() == 6) {
    u.prev_confidences = parse_confidences(fields[5], source, line);
    if (u.prev_confidences->size() != u.prev_tokens.size()) {
      throw ParseError(source, line, "previous-turn confidences do not match previous-turn tokens");
    }
  }
  return u;
}

void check_unique(const std::vector<Utterance>& items, const std::string& source) {
  std::unordered_set<std::string> seen;
  for (const auto& u : items) {
    if (!seen.insert(u.id).second) throw IntegrityError(source + ": duplicate id '" + u.id + "'");
  }
}

}  // namespace

void write_record(std::ostream& out, const Utterance& u) {
  u.validate();
  out << u.id << '\t' << (u.label ? label_name(*u.label) : std::string_view("U")) << '\t'
      << join(u.prev_tokens) << '\t' << join(u.cur_tokens) << '\t';
  write_confidences(out, u.cur_confidences);
  if (u.prev_confidences) {
    out << '\t';
    write_confidences(out, *u.prev_confidences);
  }
  out << '\n';
}

std::vector<Utterance> read_records(std::istream& in, const std::string& source) {
  std::vector<Utterance> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    out.push_back(parse_record(line, source, n));
  }
  check_unique(out, source);
  return out;
}

std::vector<Utterance> load_records(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  return read_records(in, path.string());
}

void save_records(const fs::path& path, const std::vector<Utterance>& items) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IntegrityError("cannot write " + path.string());
  for (const auto& u : items) write_record(out, u);
  if (!out) throw IntegrityError("write failed for " + path.string());
}

std::vector<Utterance> Corpus::select(Partition p) const {
  std::vector<Utterance> out;
  for (const auto& u : utterances) {
    auto it = partition_map.find(u.id);
    if (it != partition_map.end() && it->second == p) out.push_back(u);
  }
  return out;
}

std::size_t Corpus::count(Partition p) const {
  return static_cast<std::size_t>(
      std::count_if(partition_map.begin(), partition_map.end(), [&](const auto& kv) { return kv.second == p; }));
}

void Corpus::validate() const {
  check_unique(utterances, "corpus");
  std::unordered_set<std::string> ids;
  for (const auto& u : utterances) ids.insert(u.id);
  for (const auto& [id, p] : partition_map) {
    if (!ids.contains(id)) throw IntegrityError("partition map names unknown id '" + id + "'");
  }
  std::array<std::array<std::size_t, 2>, 4> counts{};
  for (const auto& u : utterances) {
    auto it = partition_map.find(u.id);
    if (it == partition_map.end()) continue;
    const Partition p = it->second;
    if (p == Partition::Unlabeled) {
      if (u.label) throw IntegrityError("unlabeled partition holds labeled item '" + u.id + "'");
      continue;
    }
    if (!u.label) throw IntegrityError(std::string(partition_name(p)) + " holds unlabeled item '" + u.id + "'");
    counts[static_cast<std::size_t>(p)][u.label == Label::DD ? 1 : 0]++;
  }
  for (Partition p : {Partition::Train, Partition::Dev, Partition::Test}) {
    const auto& c = counts[static_cast<std::size_t>(p)];
    if (c[0] + c[1] > 0 && (c[0] == 0 || c[1] == 0)) {
      throw IntegrityError(std::string(partition_name(p)) + " partition is single-class");
    }
  }
}

Corpus load_corpus(const fs::path& path) {
  Corpus c;
  if (!fs::is_directory(path)) {
    c.utterances = load_records(path);
    return c;
  }
  c.utterances = load_records(path / "utterances.tsv");
  const fs::path map_path = path / "partitions.tsv";
  std::ifstream in(map_path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + map_path.string());
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const auto f = split_char(line, '\t');
    if (f.size() != 2) throw ParseError(map_path.string(), n, "expected 'id<TAB>partition'");
    const auto p = parse_partition(f[1]);
    if (!p) throw ParseError(map_path.string(), n, "unknown partition '" + std::string(f[1]) + "'");
    if (!c.partition_map.emplace(std::string(f[0]), *p).second) {
      throw IntegrityError(map_path.string() + ": id '" + std::string(f[0]) + "' assigned twice");
    }
  }
  c.validate();
  return c;
}

void save_corpus(const Corpus& c, const fs::path& dir) {
  c.validate();
  fs::create_directories(dir);
  save_records(dir / "utterances.tsv", c.utterances);
  std::ofstream out(dir / "partitions.tsv", std::ios::binary);
  if (!out) throw IntegrityError("cannot write " + (dir / "partitions.tsv").string());
  for (const auto& u : c.utterances) {
    auto it = c.partition_map.find(u.id);
    if (it != c.partition_map.end()) out << u.id << '\t' << partition_name(it->second) << '\n';
  }
}

namespace {

// Integer counts proportional to `weights` summing to `total`; ties in the
// remainders go to the earlier slot.
std::vector<std::size_t> largest_remainder(const std::vector<double>& weights, std::size_t total) {
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<std::size_t> out(weights.size(), 0);
  if (sum <= 0.0 || total == 0) return out;
  std::vector<double> rem(weights.size());
  std::size_t given = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = static_cast<double>(total) * weights[i] / sum;
    out[i] = static_cast<std::size_t>(std::floor(exact));
    rem[i] = exact - static_cast<double>(out[i]);
    given += out[i];
  }
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; given < total; ++k, ++given) out[order[k % order.size()]]++;
  return out;
}

}  // namespace

Corpus partition(const Corpus& c, std::array<double, 3> fractions, std::uint64_t seed) {
  double fsum = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw ConfigError("partition fractions must be non-negative");
    fsum += f;
  }
  if (fsum > 1.0 + 1e-9) throw ConfigError("partition fractions sum to more than 1");

  std::vector<std::size_t> dd, ndd;
  Corpus out;
  out.utterances = c.utterances;
  for (std::size_t i = 0; i < c.utterances.size(); ++i) {
    const auto& u = c.utterances[i];
    if (!u.label) {
      out.partition_map[u.id] = Partition::Unlabeled;
    } else {
      (*u.label == Label::DD ? dd : ndd).push_back(i);
    }
  }
  const std::size_t n = dd.size() + ndd.size();
  const auto assigned = static_cast<std::size_t>(std::floor(fsum * static_cast<double>(n) + 1e-9));
  const auto sizes = largest_remainder({fractions[0], fractions[1], fractions[2]}, assigned);
  const double p_dd = n == 0 ? 0.0 : static_cast<double>(dd.size()) / static_cast<double>(n);
  std::vector<double> dd_share(3);
  for (std::size_t j = 0; j < 3; ++j) dd_share[j] = static_cast<double>(sizes[j]) * p_dd;
  const auto dd_total = static_cast<std::size_t>(std::llround(static_cast<double>(assigned) * p_dd));
  const auto dd_counts = largest_remainder(dd_share, std::min(dd_total, dd.size()));

  Rng rng(seed);
  std::shuffle(dd.begin(), dd.end(), rng);
  std::shuffle(ndd.begin(), ndd.end(), rng);
  std::size_t di = 0, ni = 0;
  const Partition parts[3] = {Partition::Train, Partition::Dev, Partition::Test};
  for (std::size_t j = 0; j < 3; ++j) {
    const std::size_t n_dd = std::min(dd_counts[j], sizes[j]);
    const std::size_t n_ndd = sizes[j] - n_dd;
    if (sizes[j] > 0 && (n_dd == 0 || n_ndd == 0)) {
      throw IntegrityError(std::string(partition_name(parts[j])) + " partition would be single-class");
    }
    if (di + n_dd > dd.size() || ni + n_ndd > ndd.size()) {
      throw IntegrityError("not enough items of each class for the requested partition sizes");
    }
    for (std::size_t k = 0; k < n_dd; ++k) out.partition_map[c.utterances[dd[di++]].id] = parts[j];
    for (std::size_t k = 0; k < n_ndd; ++k) out.partition_map[c.utterances[ndd[ni++]].id] = parts[j];
  }
  out.validate();
  return out;
}

}  // namespace ddsd
