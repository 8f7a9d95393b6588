#include "breakiv/cli.hpp"

int main(int argc, char** argv) { return breakiv::run_cli(argc, argv); }
