#include "qslm/workbench/cli.hpp"

int main(int argc, char** argv) { return qslm::cli::run_cli(argc, argv); }
