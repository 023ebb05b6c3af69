#include "spinecycle/nrrd.hpp"

#include <zlib.h>

#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstring>
#include <optional>
#include <sstream>

#include "spinecycle/fileio.hpp"

namespace spinecycle {

namespace {

enum class ElementKind { UInt8, Int16, Float32 };

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

double parse_double(const std::string& field, const std::string& token) {
    try {
        std::size_t used = 0;
        const double v = std::stod(token, &used);
        if (used != token.size() || !std::isfinite(v)) throw std::invalid_argument(token);
        return v;
    } catch (const std::exception&) {
        throw NrrdError(field, "invalid number '" + token + "'");
    }
}

// "(a,b,c)" groups in order.
std::vector<std::array<double, 3>> parse_vectors(const std::string& field, const std::string& value) {
    std::vector<std::array<double, 3>> out;
    std::size_t pos = 0;
    while (true) {
        const auto open = value.find_first_not_of(" \t", pos);
        if (open == std::string::npos) break;
        if (value[open] != '(') {
            if (lower(value.substr(open, 4)) == "none") throw NrrdError(field, "'none' axes are not supported");
            throw NrrdError(field, "expected '(' in '" + value + "'");
        }
        const auto close = value.find(')', open);
        if (close == std::string::npos) throw NrrdError(field, "unbalanced parentheses");
        std::array<double, 3> v{};
        std::stringstream ss(value.substr(open + 1, close - open - 1));
        std::string tok;
        std::size_t k = 0;
        while (std::getline(ss, tok, ',')) {
            if (k >= 3) throw NrrdError(field, "vector with more than 3 components");
            v[k++] = parse_double(field, trim(tok));
        }
        if (k != 3) throw NrrdError(field, "vector with fewer than 3 components");
        out.push_back(v);
        pos = close + 1;
    }
    return out;
}

ElementKind parse_type(const std::string& value) {
    const auto v = lower(value);
    if (v == "uchar" || v == "unsigned char" || v == "uint8" || v == "uint8_t") return ElementKind::UInt8;
    if (v == "short" || v == "short int" || v == "signed short" || v == "signed short int" || v == "int16" ||
        v == "int16_t") {
        return ElementKind::Int16;
    }
    if (v == "float") return ElementKind::Float32;
    throw NrrdError("type", "unsupported element type '" + value + "'");
}

std::size_t element_size(ElementKind k) {
    switch (k) {
    case ElementKind::UInt8: return 1;
    case ElementKind::Int16: return 2;
    case ElementKind::Float32: return 4;
    }
    return 1;
}

std::string inflate_gzip(std::string_view in, std::size_t expected) {
    std::string out(expected, '\0');
    z_stream zs{};
    if (inflateInit2(&zs, 15 + 32) != Z_OK) throw NrrdError("encoding", "zlib initialisation failed");
    zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
    zs.avail_in = static_cast<uInt>(in.size());
    zs.next_out = reinterpret_cast<Bytef*>(out.data());
    zs.avail_out = static_cast<uInt>(out.size());
    const int rc = inflate(&zs, Z_FINISH);
    const auto produced = zs.total_out;
    inflateEnd(&zs);
    if (rc != Z_STREAM_END || produced != expected) {
        throw NrrdError("encoding", "gzip data does not decompress to " + std::to_string(expected) + " bytes");
    }
    return out;
}

std::string deflate_gzip(std::string_view in) {
    z_stream zs{};
    if (deflateInit2(&zs, Z_BEST_SPEED, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY) != Z_OK) {
        throw std::runtime_error("zlib initialisation failed");
    }
    std::string out(deflateBound(&zs, static_cast<uLong>(in.size())) + 32, '\0');
    zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
    zs.avail_in = static_cast<uInt>(in.size());
    zs.next_out = reinterpret_cast<Bytef*>(out.data());
    zs.avail_out = static_cast<uInt>(out.size());
    const int rc = deflate(&zs, Z_FINISH);
    out.resize(zs.total_out);
    deflateEnd(&zs);
    if (rc != Z_STREAM_END) throw std::runtime_error("gzip compression failed");
    return out;
}

template <typename T>
void swap_if_big_endian(std::vector<T>& data) {
    if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
        for (auto& v : data) {
            auto* b = reinterpret_cast<unsigned char*>(&v);
            std::reverse(b, b + sizeof(T));
        }
    }
}

template <typename T>
Grid<T> make_grid(const GridGeometry& geo, std::string_view bytes) {
    std::vector<T> data(geo.voxel_count());
    std::memcpy(data.data(), bytes.data(), bytes.size());
    swap_if_big_endian(data);
    return Grid<T>(geo, std::move(data));
}

template <typename T>
constexpr const char* type_name() {
    if constexpr (std::is_same_v<T, std::uint8_t>) return "uint8";
    if constexpr (std::is_same_v<T, std::int16_t>) return "int16";
    return "float";
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

AnyGrid read_nrrd(const std::filesystem::path& path) {
    const std::string file = read_file(path);
    std::size_t pos = 0;
    auto next_line = [&]() -> std::optional<std::string> {
        if (pos >= file.size()) return std::nullopt;
        auto end = file.find('\n', pos);
        if (end == std::string::npos) end = file.size();
        std::string line = file.substr(pos, end - pos);
        pos = end + 1;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
    };

    const auto magic = next_line();
    if (!magic || magic->rfind("NRRD000", 0) != 0) throw NrrdError("magic", "not an NRRD file: " + path.string());

    std::optional<ElementKind> kind;
    std::optional<std::array<std::size_t, 3>> sizes;
    std::optional<std::vector<std::array<double, 3>>> directions;
    Vec3 origin;
    bool ras = false;
    bool have_space = false;
    NrrdEncoding encoding = NrrdEncoding::Raw;
    bool dimension_seen = false;

    while (true) {
        const auto line = next_line();
        if (!line) throw NrrdError("header", "missing blank line before data");
        if (line->empty()) break;
        if ((*line)[0] == '#') continue;
        if (line->find(":=") != std::string::npos) continue;  // key/value annotations
        const auto colon = line->find(": ");
        if (colon == std::string::npos) throw NrrdError(*line, "malformed header line");
        const std::string field = lower(trim(line->substr(0, colon)));
        const std::string value = trim(line->substr(colon + 2));

        if (field == "type") {
            kind = parse_type(value);
        } else if (field == "dimension") {
            if (value != "3") throw NrrdError("dimension", "only 3-D grids are supported, got " + value);
            dimension_seen = true;
        } else if (field == "space") {
            const auto v = lower(value);
            if (v == "left-posterior-superior" || v == "lps") {
                ras = false;
            } else if (v == "right-anterior-superior" || v == "ras") {
                ras = true;
            } else {
                throw NrrdError("space", "unsupported space '" + value + "'");
            }
            have_space = true;
        } else if (field == "space dimension") {
            if (value != "3") throw NrrdError("space dimension", "must be 3");
            have_space = true;
        } else if (field == "sizes") {
            std::stringstream ss(value);
            std::array<std::size_t, 3> s{};
            std::string tok;
            std::size_t k = 0;
            while (ss >> tok) {
                if (k >= 3) throw NrrdError("sizes", "more than 3 sizes");
                std::size_t v = 0;
                const auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
                if (ec != std::errc() || p != tok.data() + tok.size() || v == 0) {
                    throw NrrdError("sizes", "invalid size '" + tok + "'");
                }
                s[k++] = v;
            }
            if (k != 3) throw NrrdError("sizes", "expected 3 sizes");
            sizes = s;
        } else if (field == "space directions") {
            auto d = parse_vectors(field, value);
            if (d.size() != 3) throw NrrdError(field, "expected 3 direction vectors");
            directions = d;
        } else if (field == "space origin") {
            auto o = parse_vectors(field, value);
            if (o.size() != 1) throw NrrdError(field, "expected one vector");
            origin = {o[0][0], o[0][1], o[0][2]};
        } else if (field == "encoding") {
            const auto v = lower(value);
            if (v == "raw") {
                encoding = NrrdEncoding::Raw;
            } else if (v == "gzip" || v == "gz") {
                encoding = NrrdEncoding::Gzip;
            } else {
                throw NrrdError("encoding", "unsupported encoding '" + value + "'");
            }
        } else if (field == "endian") {
            if (lower(value) != "little") throw NrrdError("endian", "only little-endian data is supported");
        } else if (field == "kinds") {
            std::stringstream ss(lower(value));
            std::string tok;
            while (ss >> tok) {
                if (tok != "domain" && tok != "space") throw NrrdError("kinds", "unsupported axis kind '" + tok + "'");
            }
        } else if (field == "content" || field == "space units") {
            // informational
        } else {
            throw NrrdError(field, "unsupported field");
        }
    }

    if (!kind) throw NrrdError("type", "missing");
    if (!dimension_seen) throw NrrdError("dimension", "missing");
    if (!sizes) throw NrrdError("sizes", "missing");
    if (!have_space) throw NrrdError("space", "missing");
    if (!directions) throw NrrdError("space directions", "missing");

    GridGeometry geo;
    geo.sizes = *sizes;
    for (std::size_t a = 0; a < 3; ++a) {
        auto d = (*directions)[a];
        if (ras) {
            d[0] = -d[0];
            d[1] = -d[1];
        }
        const double diag = d[a];
        for (std::size_t b = 0; b < 3; ++b) {
            if (b != a && std::abs(d[b]) > 1e-9 * std::max(1.0, std::abs(diag))) {
                throw NrrdError("space directions", "non-diagonal direction matrix; reorient upstream");
            }
        }
        if (!(std::abs(diag) > 0.0)) throw NrrdError("space directions", "zero spacing");
        geo.spacing[a] = std::abs(diag);
        static constexpr AxisCode pos[3] = {AxisCode::L, AxisCode::P, AxisCode::S};
        static constexpr AxisCode neg[3] = {AxisCode::R, AxisCode::A, AxisCode::I};
        geo.orientation[a] = diag > 0 ? pos[a] : neg[a];
    }
    if (ras) {
        origin.x = -origin.x;
        origin.y = -origin.y;
    }
    geo.origin = origin;

    const std::size_t expected = geo.voxel_count() * element_size(*kind);
    std::string_view payload(file.data() + std::min(pos, file.size()), file.size() - std::min(pos, file.size()));
    std::string inflated;
    if (encoding == NrrdEncoding::Gzip) {
        inflated = inflate_gzip(payload, expected);
        payload = inflated;
    } else if (payload.size() != expected) {
        throw NrrdError("sizes", "raw data holds " + std::to_string(payload.size()) + " bytes, expected " +
                                     std::to_string(expected));
    }
    switch (*kind) {
    case ElementKind::UInt8: return make_grid<std::uint8_t>(geo, payload);
    case ElementKind::Int16: return make_grid<std::int16_t>(geo, payload);
    case ElementKind::Float32: return make_grid<float>(geo, payload);
    }
    throw NrrdError("type", "unreachable");
}

template <typename T>
Grid<T> read_nrrd_as(const std::filesystem::path& path) {
    auto any = read_nrrd(path);
    if (auto* g = std::get_if<Grid<T>>(&any)) return std::move(*g);
    throw NrrdError("type", std::string("expected ") + type_name<T>() + " data in " + path.string());
}

template MaskGrid read_nrrd_as<std::uint8_t>(const std::filesystem::path&);
template Int16Grid read_nrrd_as<std::int16_t>(const std::filesystem::path&);
template FloatGrid read_nrrd_as<float>(const std::filesystem::path&);

MaskGrid read_mask_nrrd(const std::filesystem::path& path) {
    return std::visit(
        [](const auto& g) {
            std::vector<std::uint8_t> data(g.data().size());
            for (std::size_t i = 0; i < data.size(); ++i) data[i] = g.data()[i] != 0 ? 1 : 0;
            return MaskGrid(g.geometry(), std::move(data));
        },
        read_nrrd(path));
}

void write_nrrd(const AnyGrid& grid, const std::filesystem::path& path, NrrdEncoding encoding) {
    std::visit(
        [&](const auto& g) {
            using T = typename std::decay_t<decltype(g)>::value_type;
            const auto& geo = g.geometry();
            std::string header = "NRRD0004\n";
            header += std::string("type: ") + type_name<T>() + "\n";
            header += "dimension: 3\nspace: left-posterior-superior\n";
            header += "sizes: " + std::to_string(geo.sizes[0]) + " " + std::to_string(geo.sizes[1]) + " " +
                      std::to_string(geo.sizes[2]) + "\n";
            header += "space directions:";
            for (std::size_t a = 0; a < 3; ++a) {
                if (world_axis(geo.orientation[a]) != static_cast<int>(a)) {
                    throw NrrdError("space directions", "grid axes are permuted; reorient before writing");
                }
                std::array<double, 3> d{0.0, 0.0, 0.0};
                d[a] = axis_sign(geo.orientation[a]) * geo.spacing[a];
                header += " (" + format_double(d[0]) + "," + format_double(d[1]) + "," + format_double(d[2]) + ")";
            }
            header += "\nkinds: domain domain domain\nendian: little\n";
            header += std::string("encoding: ") + (encoding == NrrdEncoding::Gzip ? "gzip" : "raw") + "\n";
            header += "space origin: (" + format_double(geo.origin.x) + "," + format_double(geo.origin.y) + "," +
                      format_double(geo.origin.z) + ")\n\n";

            std::vector<T> data(g.data().begin(), g.data().end());
            swap_if_big_endian(data);
            std::string_view raw(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(T));
            if (encoding == NrrdEncoding::Gzip) {
                write_file_atomic(path, header + deflate_gzip(raw));
            } else {
                std::string bytes;
                bytes.reserve(header.size() + raw.size());
                bytes += header;
                bytes += raw;
                write_file_atomic(path, bytes);
            }
        },
        grid);
}

}  // namespace spinecycle
