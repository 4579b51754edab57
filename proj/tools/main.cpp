#include "spdls/cli.hpp"

int main(int argc, char** argv) { return spdls::cli::cli_main(argc, argv); }
