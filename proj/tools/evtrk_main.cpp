#include "evtrk/cli.hpp"

int main(int argc, char** argv) { return evtrk::cli::run(argc, argv); }
