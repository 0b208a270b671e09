#include <string>
#include <vector>

#include "cyclelab/cli_app.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return cyclelab::run_cli(args);
}
