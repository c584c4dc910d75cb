#include <iostream>

#include "vitforge_cli/commands.hpp"

int main(int argc, char** argv) { return vitforge::cli::run(argc, argv, std::cout, std::cerr); }
