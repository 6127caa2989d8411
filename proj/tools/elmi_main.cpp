#include "elmi/cli.hpp"

int main(int argc, char** argv) { return elmi::run_cli(argc, argv); }
