#include "msmv/experiments.hpp"

int main(int argc, char** argv) { return msmv::cli_main(argc, argv); }
