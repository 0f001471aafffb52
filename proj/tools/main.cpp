#include "dragkit/cli.hpp"

int main(int argc, char** argv) { return dragkit::run_cli(argc, argv); }
