#include "bglab/cli.hpp"

int main(int argc, char** argv) { return bglab::run_cli(argc, argv); }
