// Copyright Contributors to the ssasc Project
// SPDX-License-Identifier: Apache-2.0
//
#include <iostream>

#include "commands.hpp"

int main(int argc, char** argv) { return ssasc::cli::run(argc, argv, std::cout, std::cerr); }
