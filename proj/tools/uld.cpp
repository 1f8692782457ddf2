#include <iostream>

#include "uld/cli.hpp"

int main(int argc, char** argv) { return uld::cli::run(argc, argv, std::cout, std::cerr); }
