#include "cli.hpp"

int main(int argc, char** argv) { return inmemo::cli::run(argc, argv); }
