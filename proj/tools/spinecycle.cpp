#include <string>
#include <vector>

#include "spinecycle/cli.hpp"

int main(int argc, char** argv) {
    return spinecycle::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
