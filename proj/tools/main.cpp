#include "cli.hpp"

int main(int argc, char** argv) { return mper::run_cli(argc, argv); }
