#include <iostream>

#include "fiml/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return fiml::cli::run(args, std::cout, std::cerr);
}
