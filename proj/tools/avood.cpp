// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "avood/commands.hpp"

int main(int argc, char** argv) { return avood::cli::run(argc, argv, std::cout, std::cerr); }
