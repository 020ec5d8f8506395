#include "dfswe/cli.hpp"

int main(int argc, char** argv) { return dfswe::run_cli(argc, argv); }
