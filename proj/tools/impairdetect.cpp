#include "impairdetect/cli.hpp"

int main(int argc, char** argv) { return impairdetect::cli::dispatch(argc, argv); }
