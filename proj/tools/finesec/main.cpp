// SPDX-License-Identifier: Apache-2.0
#include "finesec/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return finesec::cli::run(argc, argv, std::cout, std::cerr); }
