#include <fabir/cli.hpp>

int main(int argc, char** argv) { return fabir::cli::run(argc, argv); }
