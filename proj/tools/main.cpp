#include "physprior/cli.hpp"

int main(int argc, char** argv) { return physprior::cli::run(argc, argv); }
