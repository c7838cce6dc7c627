#include "mot/cli/app.hpp"

int main(int argc, char** argv) { return mot::cli::run_cli(argc, argv); }
