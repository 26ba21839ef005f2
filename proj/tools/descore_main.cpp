#include "descore/cli.hpp"

int main(int argc, char** argv) { return descore::cli::run(argc, argv); }
