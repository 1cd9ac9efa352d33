#include <iostream>

#include "dmlganr/cli.hpp"

int main(int argc, char** argv) { return dmlganr::run_cli(argc, argv, std::cout, std::cerr); }
