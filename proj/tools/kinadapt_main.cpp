#include "kinadapt/cli/commands.hpp"

int main(int argc, char** argv) { return kinadapt::cli::run(argc, argv); }
