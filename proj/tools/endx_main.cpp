#include <iostream>
#include <string>
#include <vector>

#include "endx/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return endx::run_cli(std::move(args), std::cout, std::cerr);
}
