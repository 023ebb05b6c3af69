// Serves the phantom oracles over the subprocess line protocol.
// Usage: spinecycle-phantom-oracle <phantom.json> [work-dir]

#include <filesystem>
#include <iostream>

#include <unistd.h>

#include "spinecycle/adapters.hpp"

int main(int argc, char** argv) {
    if (argc < 2 || argc > 3) {
        std::cerr << "usage: spinecycle-phantom-oracle <phantom.json> [work-dir]\n";
        return 1;
    }
    try {
        const auto setup = spinecycle::build_phantom_setup(spinecycle::read_phantom_description(argv[1]));
        const std::filesystem::path work =
            argc == 3 ? std::filesystem::path(argv[2])
                      : std::filesystem::temp_directory_path() / ("spinecycle-phantom-oracle-" + std::to_string(::getpid()));
        spinecycle::serve_oracle(std::cin, std::cout, setup.oracles->segmentor, setup.oracles->classifier, work);
        if (argc == 2) std::filesystem::remove_all(work);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
