#include <iostream>

#include "imgconf_cli/commands.hpp"

int main(int argc, char** argv) { return imgconf::cli::run(argc, argv, std::cout, std::cerr); }
