#include <iostream>

#include "textcav/cli.hpp"

int main(int argc, char** argv) { return textcav::run_cli(argc, argv, std::cout, std::cerr); }
