#include "ceidm/cli.hpp"

int main(int argc, char** argv) { return ceidm::cli::run(argc, argv); }
