#include <iostream>

#include "sitebias/commands.hpp"

int main(int argc, char** argv) { return sitebias::cli::run(argc, argv, std::cout, std::cerr); }
