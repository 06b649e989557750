#include "ppsvae/cli.hpp"

int main(int argc, char** argv) { return ppsvae::run_cli(argc, argv); }
