#include "l2gmom/cli.hpp"

int main(int argc, char** argv) { return l2gmom::cli::run(argc, argv); }
