#include <iostream>

#include "lktcn/cli.hpp"

int main(int argc, char** argv) { return lktcn::cli::run(argc, argv, std::cout, std::cerr); }
