#include "cli_app.hpp"

int main(int argc, char** argv) { return pfa::cli::run_cli(argc, argv); }
