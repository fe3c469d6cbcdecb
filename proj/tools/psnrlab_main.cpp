#include "psnrlab/cli.hpp"

int main(int argc, char** argv) { return psnrlab::cli::run(argc, argv); }
