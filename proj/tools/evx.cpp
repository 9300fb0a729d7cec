#include "evx/cli.hpp"

int main(int argc, char** argv) { return evx::cli::run(argc, argv); }
