#include <iostream>

#include "opnet/harness.hpp"

int main(int argc, char** argv) { return opnet::run_cli(argc, argv, std::cout, std::cerr); }
