#include "nvl/harness.hpp"

int main(int argc, char** argv) { return nvl::cli_dispatch(argc, argv); }
