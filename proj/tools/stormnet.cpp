#include "stormnet/cli.hpp"

int main(int argc, char** argv) { return stormnet::cli::run(argc, argv); }
