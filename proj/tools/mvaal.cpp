#include "mvaal/harness/harness.hpp"

int main(int argc, char** argv) { return mvaal::harness::run_cli(argc, argv); }
