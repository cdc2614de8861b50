#include "xmar/cli.hpp"

int main(int argc, char** argv) { return xmar::cli::run(argc, argv); }
