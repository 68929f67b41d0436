#include <iostream>

#include "umrl/cli/commands.hpp"

int main(int argc, char** argv) { return umrl::cli::run_cli(argc, argv, std::cout, std::cerr); }
