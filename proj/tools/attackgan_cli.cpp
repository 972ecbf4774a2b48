#include "attackgan/cli.hpp"

int main(int argc, char** argv) { return attackgan::dispatch(argc, argv); }
