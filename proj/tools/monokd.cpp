#include <iostream>
#include <string>
#include <vector>

#include "monokd/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return monokd::cli_main(args, std::cout, std::cerr);
}
