#include "greybox/cli.hpp"

int main(int argc, char** argv) { return greybox::dispatch(argc, argv); }
