#include <iostream>

#include "i2e/cli.hpp"

int main(int argc, char** argv) { return i2e::cli::run(argc, argv, std::cout, std::cerr); }
