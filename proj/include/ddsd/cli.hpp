#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ddsd::cli {

std::string sha256_hex(std::string_view bytes);
// Hash of a file's bytes, or for a directory a hash over its sorted
// (name, file hash) pairs.
std::string hash_path(const std::filesystem::path& path);

// key=value lines; blank lines and '#' comments skipped. ParseError on
// anything else.
std::vector<std::pair<std::string, std::string>> read_key_values(const std::filesystem::path& path);

// Runs one subcommand. args excludes the program name. Returns 0 on
// success, 1 on domain errors, 2 on usage errors.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ddsd::cli
