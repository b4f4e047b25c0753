#include <vector>

#include "metareg/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return metareg::cli::run(std::move(args));
}
