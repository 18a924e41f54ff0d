#include "danhar/cli.hpp"

int main(int argc, char** argv) { return danhar::cli::run(argc, argv); }
