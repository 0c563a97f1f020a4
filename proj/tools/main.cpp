#include "cbpf/cli.hpp"

int main(int argc, char** argv) { return cbpf::cli_main(argc, argv); }
