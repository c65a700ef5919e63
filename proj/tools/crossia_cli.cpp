#include <iostream>

#include "crossia/cli.hpp"

int main(int argc, char** argv) { return crossia::cli::run(argc, argv, std::cout, std::cerr); }
