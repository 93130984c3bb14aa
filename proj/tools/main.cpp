#include <iostream>

#include "blindrest/cli.hpp"

int main(int argc, char** argv) {
  return blindrest::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
