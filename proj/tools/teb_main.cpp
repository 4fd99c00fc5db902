#include "teb/cli.hpp"

int main(int argc, char** argv) { return teb::run_cli(argc, argv); }
