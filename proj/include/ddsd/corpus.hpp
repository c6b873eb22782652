#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ddsd/utterance.hpp"

namespace ddsd {

enum class Partition : std::uint8_t { Train, Dev, Test, Unlabeled };

std::string_view partition_name(Partition p);
std::optional<Partition> parse_partition(std::string_view s);

// Record format, one utterance per line, tab separated:
//   id  label(DD|NDD|U)  prev-tokens  cur-tokens  cur-confidences  [prev-confidences]
// Token lists are space-joined; confidences are written with 4 decimals.
void write_record(std::ostream& out, const Utterance& u);
std::vector<Utterance> read_records(std::istream& in, const std::string& source);
std::vector<Utterance> load_records(const std::filesystem::path& path);
void save_records(const std::filesystem::path& path, const std::vector<Utterance>& items);

struct Corpus {
  std::vector<Utterance> utterances;
  // Ids without an entry are unassigned.
  std::map<std::string, Partition> partition_map;

  std::vector<Utterance> select(Partition p) const;
  std::size_t count(Partition p) const;
  // Unique ids, known ids in the map, unlabeled items unlabeled, and both
  // classes in every nonempty labeled partition. Throws IntegrityError.
  void validate() const;

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

// A corpus directory holds utterances.tsv (record format) and partitions.tsv
// ("id<TAB>partition" lines). Loading a plain record file gives a corpus with
// nothing assigned.
Corpus load_corpus(const std::filesystem::path& path);
void save_corpus(const Corpus& c, const std::filesystem::path& dir);

// Stratified seeded split of the labeled items into train/dev/test. Within
// each class, counts are apportioned by largest remainder, so every partition
// keeps the global class balance up to rounding. Unlabeled items go to the
// unlabeled partition. Items beyond the fractions stay unassigned.
Corpus partition(const Corpus& c, std::array<double, 3> fractions, std::uint64_t seed);

}  // namespace ddsd
