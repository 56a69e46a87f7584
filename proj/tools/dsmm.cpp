#include <iostream>
#include <string>
#include <vector>

#include "dsmm/cli.hpp"

int main(int argc, char** argv) {
  dsmm::cli::tune_allocator();
  std::vector<std::string> args(argv, argv + argc);
  return dsmm::cli::run(args, std::cout, std::cerr);
}
