#include "distner/cli.hpp"

int main(int argc, char** argv) { return distner::cli_dispatch(argc, argv); }
