#include <iostream>

#include "chanout/cli.hpp"

int main(int argc, char** argv) { return chanout::run_cli(argc, argv, std::cout, std::cerr); }
