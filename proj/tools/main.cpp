#include <iostream>

#include "fastrr/cli.hpp"

int main(int argc, char** argv) {
    return fastrr::run_cli(argc, argv, std::cout, std::cerr);
}
