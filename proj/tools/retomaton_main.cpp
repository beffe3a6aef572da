#include "retomaton/cli.hpp"

int main(int argc, char** argv) { return retomaton::cli_main(argc, argv); }
