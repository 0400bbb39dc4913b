#include <iostream>

#include "optweights/cli.hpp"

int main(int argc, char** argv) { return optw::run_cli(argc, argv, std::cout, std::cerr); }
