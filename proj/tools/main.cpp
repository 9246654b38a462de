#include <iostream>

#include "xaibench/harness.hpp"

int main(int argc, char** argv) {
  xb::harness::tune_allocator();
  return xb::harness::run_cli(argc, argv, std::cout, std::cerr);
}
