#include "cdpo/cli.hpp"

int main(int argc, char** argv) { return cdpo::cli::run_cli(argc, argv); }
