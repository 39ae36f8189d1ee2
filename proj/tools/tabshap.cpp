#include <iostream>

#include "tabshap/cli.hpp"

int main(int argc, char** argv) { return tabshap::cli::run(argc, argv, std::cout, std::cerr); }
