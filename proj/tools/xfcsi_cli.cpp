// SPDX-License-Identifier: Apache-2.0
#include "xfcsi/cli.hpp"

int main(int argc, char** argv) { return xfcsi::cli::run(argc, argv); }
