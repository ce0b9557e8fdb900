#include <iostream>
#include <string>
#include <vector>

#include "aggfilter/harness.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return aggfilter::harness::cli_dispatch(args, std::cout, std::cerr);
}
