#include "pgnn/cli.hpp"

int main(int argc, char** argv) { return pgnn::cli::run(argc, argv); }
