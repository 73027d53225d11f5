#include "sqlsynth/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return sqlsynth::run_cli(argc, argv, std::cout, std::cerr); }
