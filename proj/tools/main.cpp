#include "cli.hpp"

int main(int argc, char** argv) { return pertrender::cli::run(argc, argv); }
