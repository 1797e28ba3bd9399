#include "distill/pipeline.hpp"

int main(int argc, char** argv) { return distill::pipeline::run_cli(argc, argv); }
