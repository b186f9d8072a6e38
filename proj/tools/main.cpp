#include "lprobe/cli.hpp"

int main(int argc, char** argv) { return lprobe::cli::run(argc, argv); }
