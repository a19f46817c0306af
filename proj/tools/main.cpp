#include "cli.hpp"

int main(int argc, char** argv) { return graphstore::cli::run_cli(argc, argv); }
