#include <iostream>
#include <string>
#include <vector>

#include "lvreg/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return lvreg::run_cli(args, std::cout, std::cerr);
}
