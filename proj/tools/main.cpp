#include <iostream>

#include "diffcod/cli.hpp"

int main(int argc, char** argv) { return diffcod::run(argc, argv, std::cout, std::cerr); }
