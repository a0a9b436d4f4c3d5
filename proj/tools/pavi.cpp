#include <iostream>

#include "pavi/harness.hpp"

int main(int argc, char** argv) { return pavi::run_cli(argc, argv, std::cout, std::cerr); }
