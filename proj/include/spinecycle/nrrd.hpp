#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "spinecycle/volume.hpp"

namespace spinecycle {

/// Raised for unreadable or unsupported NRRD files; the message names the offending field.
class NrrdError : public std::runtime_error {
public:
    NrrdError(const std::string& field, const std::string& message)
        : std::runtime_error("NRRD field '" + field + "': " + message), field_(field) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

enum class NrrdEncoding { Raw, Gzip };

/// Reads a 3-D uint8, int16 or float32 NRRD with raw or gzip encoding, little-endian data and a
/// diagonal direction matrix in LPS or RAS space. Geometry is returned in LPS world coordinates.
AnyGrid read_nrrd(const std::filesystem::path& path);

/// Reads a grid of one element kind; throws NrrdError("type") for any other kind.
template <typename T>
Grid<T> read_nrrd_as(const std::filesystem::path& path);

/// Reads any element kind and binarizes (non-zero -> 1).
MaskGrid read_mask_nrrd(const std::filesystem::path& path);

/// Writes atomically (temporary file then rename). Gzip uses the fastest compression level.
void write_nrrd(const AnyGrid& grid, const std::filesystem::path& path,
                NrrdEncoding encoding = NrrdEncoding::Gzip);

template <typename T>
void write_nrrd(const Grid<T>& grid, const std::filesystem::path& path,
                NrrdEncoding encoding = NrrdEncoding::Gzip) {
    write_nrrd(AnyGrid(grid), path, encoding);
}

}  // namespace spinecycle
