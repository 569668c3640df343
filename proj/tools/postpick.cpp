#include "postpick/cli.hpp"

int main(int argc, char** argv) { return postpick::cli::run(argc, argv); }
