#include <iostream>
#include <string>
#include <vector>

#include "hqtool/commands.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    return hqtool::run(args, std::cout, std::cerr);
}
