#include <iostream>

#include "sepiv/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return sepiv::run_cli(args, std::cout, std::cerr);
}
