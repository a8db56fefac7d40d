#include <iostream>

#include "msit/cli.hpp"

int main(int argc, char** argv) { return msit::cli::run(argc, argv, std::cout, std::cerr); }
