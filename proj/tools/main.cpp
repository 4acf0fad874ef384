#include "foveacast/cli.hpp"

int main(int argc, char** argv) { return foveacast::cli_main(argc, argv); }
