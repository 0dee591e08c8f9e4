#include <iostream>

#include "ipsdm/pipeline.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return ipsdm::run_cli(args, std::cout, std::cerr);
}
