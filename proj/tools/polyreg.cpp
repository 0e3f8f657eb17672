#include "polyreg/cli/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
  return polyreg::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
