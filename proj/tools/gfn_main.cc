#include <iostream>

#include "gfn/cli.h"

int main(int argc, char** argv) { return gfn::cli::run(argc, argv, std::cout, std::cerr); }
