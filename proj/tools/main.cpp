#include <iostream>

#include "vfr/harness/cli.hpp"

int main(int argc, char** argv) { return vfr::run_cli(argc, argv, std::cout, std::cerr); }
