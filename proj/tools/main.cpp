#include <cstdlib>
#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    std::optional<std::string> env;
    if (const char* s = std::getenv("TEXT2TRAFFIC_SEED")) env = s;
    return t2t::cli::dispatch(args, std::cout, std::cerr, env);
}
