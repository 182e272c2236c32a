#include <iostream>

#include "fovsteg/cli.hpp"

int main(int argc, char** argv) { return fovsteg::run_cli(argc, argv, std::cout, std::cerr); }
