#include "trailcam/cli.hpp"

int main(int argc, char** argv) { return trailcam::cli::run(argc, argv); }
