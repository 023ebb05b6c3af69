#include "spinecycle/geometry.hpp"

#include <stdexcept>
#include <string>

namespace spinecycle {

char axis_code_char(AxisCode c) {
    switch (c) {
    case AxisCode::L: return 'L';
    case AxisCode::R: return 'R';
    case AxisCode::P: return 'P';
    case AxisCode::A: return 'A';
    case AxisCode::S: return 'S';
    case AxisCode::I: return 'I';
    }
    return '?';
}

AxisCode axis_code_from_char(char c) {
    switch (c) {
    case 'L': return AxisCode::L;
    case 'R': return AxisCode::R;
    case 'P': return AxisCode::P;
    case 'A': return AxisCode::A;
    case 'S': return AxisCode::S;
    case 'I': return AxisCode::I;
    default: throw std::invalid_argument(std::string("unknown axis code '") + c + "'");
    }
}

bool valid_orientation(const Orientation& o) {
    std::array<int, 3> seen{};
    for (auto c : o) ++seen[world_axis(c)];
    return seen == std::array<int, 3>{1, 1, 1};
}

}  // namespace spinecycle
