#include "metaprompt/cli.hpp"

int main(int argc, char** argv) { return metaprompt::cli_main(argc, argv); }
