#include "prospect/cli.hpp"

int main(int argc, char** argv) { return prospect::cli::cli_main(argc, argv); }
