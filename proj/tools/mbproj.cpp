#include <iostream>

#include "mbproj/harness.hpp"

int main(int argc, char** argv) { return mbproj::cli_main(argc, argv, std::cout, std::cerr); }
