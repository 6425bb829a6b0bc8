#include <iostream>

#include "l2i/cli.hpp"

int main(int argc, char** argv) { return l2i::run(argc, argv, std::cout, std::cerr); }
