#include "kmaml/cli/commands.hpp"

int main(int argc, char** argv) { return kmaml::run_cli(argc, argv); }
