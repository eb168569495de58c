#include <iostream>

#include "map_cli.hpp"

int main(int argc, char** argv) { return hmap::cli::run(argc, argv, std::cout, std::cerr); }
