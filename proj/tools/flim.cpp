#include "flim/cli.hpp"

int main(int argc, char** argv) { return flim::cli_main(argc, argv); }
