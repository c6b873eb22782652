#include <iostream>
#include <string>
#include <vector>

#include "ddsd/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return ddsd::cli::dispatch(args, std::cout, std::cerr);
}
