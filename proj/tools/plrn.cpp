#include "plrn/cli.hpp"

int main(int argc, char** argv) { return plrn::cli::run(argc, argv); }
