#include "mfbo/cli.hpp"

int main(int argc, char** argv) { return mfbo::cli::run(argc, argv); }
