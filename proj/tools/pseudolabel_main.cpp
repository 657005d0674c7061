#include <iostream>

#include "pseudolabel/cli.hpp"

int main(int argc, char** argv) { return pseudolabel::run_cli(argc, argv, std::cout, std::cerr); }
