#include <iostream>

#include "dualformer/cli.hpp"

int main(int argc, char** argv) { return dualformer::cli::run(argc, argv, std::cout, std::cerr); }
