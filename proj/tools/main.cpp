#include "cli.hpp"

int main(int argc, char **argv) { return ctsynth::run_cli(argc, argv); }
