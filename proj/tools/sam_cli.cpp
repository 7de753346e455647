#include "sam/cli.hpp"

int main(int argc, char** argv) { return sam::cli_main(argc, argv); }
